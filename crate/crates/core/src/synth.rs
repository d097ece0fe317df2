//! Synthetic tool-tissue episodes: scripted pushing and pulling over a
//! rendered elastic membrane with an analytic force law.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ForceVector, Frame, FrameKind, SequenceRecord, Task, ToolSample, FORCE_DIM};
use crate::error::{Error, Result};
use crate::io::{sequence_dir, write_manifest, write_sequence, CameraModel, ManifestEntry, SequenceMeta, Split, MANIFEST_FILE};
use crate::nnet::rng_for;
use crate::optim::parse_kv;

/// Scene geometry, material and rendering parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Membrane height-field samples per frame side.
    pub grid: usize,
    /// Linear stiffness (N/m).
    pub k1: f64,
    /// Cubic stiffness (N/m^3).
    pub k3: f64,
    /// Contact damping (N s/m).
    pub damping: f64,
    /// Grasp shear stiffness (N/m).
    pub ks: f64,
    /// Damping while grasped (N s/m).
    pub grasp_damping: f64,
    pub friction: f64,
    /// Friction speed scale (m/s) smoothing the direction at rest.
    pub friction_speed: f64,
    /// Lever arm from the sensor to the contact point (m).
    pub lever: [f64; 3],
    /// Membrane deformation width (m).
    pub dimple_sigma: f64,
    pub specular_blobs: usize,
    pub specular_intensity: f64,
    pub texture_seed: u64,
    pub rate: f64,
    pub px_per_m: f64,
    /// Half-extent of the reachable workspace in x and y (m).
    pub extent: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            grid: 64,
            k1: 500.0,
            k3: 1e5,
            damping: 5.0,
            ks: 800.0,
            grasp_damping: 2.0,
            friction: 0.05,
            friction_speed: 1e-3,
            lever: [0.01, 0.02, 0.05],
            dimple_sigma: 0.006,
            specular_blobs: 6,
            specular_intensity: 0.5,
            texture_seed: 7,
            rate: 50.0,
            px_per_m: 800.0,
            extent: 0.03,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.k1, self.k3, self.damping, self.ks, self.grasp_damping, self.friction].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("stiffness, damping and friction must be >= 0".into()));
        }
        if !(self.rate > 0.0) || !(self.px_per_m > 0.0) || !(self.dimple_sigma > 0.0) || !(self.friction_speed > 0.0) {
            return Err(Error::Config("rate, scale and widths must be positive".into()));
        }
        if self.height == 0 || self.width == 0 || self.grid < 2 {
            return Err(Error::Config("frame and grid sizes must be positive".into()));
        }
        let half_px = self.extent * self.px_per_m;
        if half_px * 2.0 > self.height.min(self.width) as f64 {
            return Err(Error::Config("workspace does not fit in the frame".into()));
        }
        Ok(())
    }

    pub fn camera(&self) -> CameraModel {
        CameraModel {
            px_per_m: self.px_per_m,
            center_row: self.height as f64 / 2.0,
            center_col: self.width as f64 / 2.0,
        }
    }
}

/// Tool state as seen by the force law and the renderer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolState {
    pub position: [f64; 3],
    /// 1 open, 0 closed.
    pub grasper: u8,
    /// Tool position at the instant the grasper closed on the membrane.
    pub grasp_point: Option<[f64; 3]>,
    /// Rest height of the membrane surface.
    pub surface_z: f64,
}

impl ToolState {
    pub fn free(position: [f64; 3], surface_z: f64) -> Self {
        Self { position, grasper: 1, grasp_point: None, surface_z }
    }

    pub fn penetration(&self) -> f64 {
        (self.surface_z - self.position[2]).max(0.0)
    }

    fn grasping(&self) -> Option<[f64; 3]> {
        if self.grasper == 0 {
            self.grasp_point
        } else {
            None
        }
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Interaction force and torque on the tool.
///
/// Contact below the surface: `fz = -(k1 d + k3 d^3) - c dd/dt` plus
/// tangential friction `mu |fz|` against the lateral motion. While grasped:
/// `f = -ks (p - p_grasp) - c_g v`. Torques are `r x f`.
pub fn force_oracle(state: &ToolState, velocity: [f64; 3], scene: &SceneConfig) -> ForceVector {
    let mut f = [0.0; 3];
    let d = state.penetration();
    if d > 0.0 {
        let d_dot = -velocity[2];
        let fz = -(scene.k1 * d + scene.k3 * d * d * d) - scene.damping * d_dot;
        let speed = (velocity[0].powi(2) + velocity[1].powi(2) + scene.friction_speed.powi(2)).sqrt();
        f[0] -= scene.friction * fz.abs() * velocity[0] / speed;
        f[1] -= scene.friction * fz.abs() * velocity[1] / speed;
        f[2] += fz;
    }
    if let Some(g) = state.grasping() {
        for k in 0..3 {
            f[k] += -scene.ks * (state.position[k] - g[k]) - scene.grasp_damping * velocity[k];
        }
    }
    let t = cross(scene.lever, f);
    ForceVector([f[0], f[1], f[2], t[0], t[1], t[2]])
}

/// Waypoint of a tool script; its grasper value holds from `t` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub position: [f64; 3],
    pub grasper: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolScript {
    pub task: Task,
    pub waypoints: Vec<Waypoint>,
    pub surface_z: f64,
}

impl ToolScript {
    pub fn duration(&self) -> f64 {
        self.waypoints.last().map_or(0.0, |w| w.t)
    }

    pub fn validate(&self, scene: &SceneConfig) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(Error::invalid("tool script has no waypoints"));
        }
        if self.waypoints.windows(2).any(|w| !(w[1].t > w[0].t)) || self.waypoints[0].t != 0.0 {
            return Err(Error::invalid("waypoints must start at t = 0 and be strictly increasing in time"));
        }
        for w in &self.waypoints {
            if w.grasper > 1 {
                return Err(Error::invalid("grasper must be 0 or 1"));
            }
            let p = w.position;
            if p.iter().any(|v| !v.is_finite())
                || p[0].abs() > scene.extent
                || p[1].abs() > scene.extent
                || (p[2] - self.surface_z).abs() > 0.05
            {
                return Err(Error::invalid(format!("waypoint at t = {} lies outside the scene", w.t)));
            }
        }
        if self.task == Task::Pulling {
            let s: Vec<u8> = self.waypoints.iter().map(|w| w.grasper).collect();
            let closes = s.windows(2).any(|w| w == [1, 0]);
            let opens = s.windows(2).any(|w| w == [0, 1]);
            if !closes || !opens {
                return Err(Error::invalid("pulling script needs a grasp interval (open, closed, open)"));
            }
        }
        Ok(())
    }

    fn segment(&self, t: f64) -> usize {
        match self.waypoints.iter().rposition(|w| w.t <= t) {
            Some(k) => k.min(self.waypoints.len() - 1),
            None => 0,
        }
    }

    /// Smoothstep interpolation (zero velocity at every waypoint).
    pub fn position_velocity(&self, t: f64) -> ([f64; 3], [f64; 3]) {
        let k = self.segment(t);
        let w = &self.waypoints;
        if k + 1 >= w.len() {
            return (w[k].position, [0.0; 3]);
        }
        let dt = w[k + 1].t - w[k].t;
        let tau = ((t - w[k].t) / dt).clamp(0.0, 1.0);
        let s = tau * tau * (3.0 - 2.0 * tau);
        let ds = 6.0 * tau * (1.0 - tau) / dt;
        let mut p = [0.0; 3];
        let mut v = [0.0; 3];
        for a in 0..3 {
            let delta = w[k + 1].position[a] - w[k].position[a];
            p[a] = w[k].position[a] + delta * s;
            v[a] = delta * ds;
        }
        (p, v)
    }

    pub fn grasper(&self, t: f64) -> u8 {
        self.waypoints[self.segment(t)].grasper
    }

    /// Time of the most recent open-to-closed toggle at or before `t`.
    fn grasp_time(&self, t: f64) -> Option<f64> {
        let w = &self.waypoints;
        (1..w.len()).rev().find(|&k| w[k].t <= t && w[k].grasper == 0 && w[k - 1].grasper == 1).map(|k| w[k].t)
    }
}

/// Smooth seeded trajectory jitter: a few slow sinusoids per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Jitter {
    terms: Vec<[(f64, f64, f64); 3]>,
}

impl Jitter {
    pub fn new(rng: &mut ChaCha8Rng, amplitude: [f64; 3]) -> Self {
        let terms = (0..3)
            .map(|_| {
                let mut axis = [(0.0, 0.0, 0.0); 3];
                for (a, t) in axis.iter_mut().enumerate() {
                    *t = (
                        amplitude[a] / 3.0 * rng.gen_range(0.5..1.0),
                        std::f64::consts::TAU * rng.gen_range(0.1..0.8),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    );
                }
                axis
            })
            .collect();
        Self { terms }
    }

    pub fn none() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn eval(&self, t: f64) -> ([f64; 3], [f64; 3]) {
        let mut p = [0.0; 3];
        let mut v = [0.0; 3];
        for axis in &self.terms {
            for (a, (amp, w, ph)) in axis.iter().enumerate() {
                p[a] += amp * (w * t + ph).sin();
                v[a] += amp * w * (w * t + ph).cos();
            }
        }
        (p, v)
    }
}

const HOVER: f64 = 0.006;

fn lateral(rng: &mut ChaCha8Rng, lim: f64) -> (f64, f64) {
    (rng.gen_range(-lim..lim), rng.gen_range(-lim..lim))
}

/// Repeated press-slide-release cycles with the grasper open.
pub fn push_script(rng: &mut ChaCha8Rng, duration: f64, surface_z: f64) -> ToolScript {
    let (x, y) = lateral(rng, 0.012);
    let mut w = vec![Waypoint { t: 0.0, position: [x, y, surface_z + HOVER], grasper: 1 }];
    let mut t = 0.0;
    let add = |w: &mut Vec<Waypoint>, t: &mut f64, dt: f64, p: [f64; 3]| {
        *t += dt;
        w.push(Waypoint { t: *t, position: p, grasper: 1 });
    };
    while t + 7.0 < duration {
        let (x, y) = lateral(rng, 0.012);
        add(&mut w, &mut t, rng.gen_range(0.8..1.4), [x, y, surface_z + HOVER]);
        let d = rng.gen_range(0.003..0.0135);
        add(&mut w, &mut t, rng.gen_range(0.8..1.5), [x, y, surface_z - d]);
        let (dx, dy) = lateral(rng, 0.004);
        let d2 = (d + rng.gen_range(-0.002..0.002)).clamp(0.002, 0.0135);
        add(&mut w, &mut t, rng.gen_range(0.8..1.8), [x + dx, y + dy, surface_z - d2]);
        add(&mut w, &mut t, rng.gen_range(0.6..1.2), [x + dx, y + dy, surface_z + HOVER]);
        add(&mut w, &mut t, rng.gen_range(0.3..0.8), [x + dx, y + dy, surface_z + HOVER]);
    }
    let last = w.last().unwrap().position;
    let rest = (duration - t).max(0.5);
    add(&mut w, &mut t, rest, last);
    ToolScript { task: Task::Pushing, waypoints: w, surface_z }
}

/// Repeated grasp-pull-return-release cycles.
pub fn pull_script(rng: &mut ChaCha8Rng, duration: f64, surface_z: f64) -> ToolScript {
    let (x, y) = lateral(rng, 0.012);
    let mut w = vec![Waypoint { t: 0.0, position: [x, y, surface_z + HOVER], grasper: 1 }];
    let mut t = 0.0;
    let add = |w: &mut Vec<Waypoint>, t: &mut f64, dt: f64, p: [f64; 3], s: u8| {
        *t += dt;
        w.push(Waypoint { t: *t, position: p, grasper: s });
    };
    while t + 8.7 < duration || w.len() == 1 {
        let (x, y) = lateral(rng, 0.012);
        add(&mut w, &mut t, rng.gen_range(0.8..1.4), [x, y, surface_z + HOVER], 1);
        add(&mut w, &mut t, rng.gen_range(0.8..1.2), [x, y, surface_z], 1);
        add(&mut w, &mut t, 0.2, [x, y, surface_z], 0);
        let (dx, dy) = lateral(rng, 0.0025);
        let dz = rng.gen_range(0.002..0.006);
        add(&mut w, &mut t, rng.gen_range(1.0..2.0), [x + dx, y + dy, surface_z + dz], 0);
        add(&mut w, &mut t, rng.gen_range(0.5..1.5), [x + dx, y + dy, surface_z + dz], 0);
        add(&mut w, &mut t, rng.gen_range(1.0..1.5), [x, y, surface_z], 0);
        add(&mut w, &mut t, 0.2, [x, y, surface_z], 1);
        add(&mut w, &mut t, 0.6, [x, y, surface_z + HOVER], 1);
    }
    let last = w.last().unwrap().position;
    let rest = (duration - t).max(0.5);
    add(&mut w, &mut t, rest, last, 1);
    ToolScript { task: Task::Pulling, waypoints: w, surface_z }
}

/// Precomputed texture and highlights for fast rendering.
#[derive(Debug, Clone)]
pub struct Renderer {
    scene: SceneConfig,
    texture: Vec<f64>,
    /// Plane waves `(fx, fy, phase, amplitude)` the texture is summed from.
    waves: Vec<(f64, f64, f64, f64)>,
    blobs: Vec<(f64, f64, f64)>,
    /// Trocar point the tool shaft enters from (pixels).
    entry: (f64, f64),
}

const LIGHT: [f64; 3] = [0.45, -0.45, 0.77];
const TISSUE: [f64; 3] = [0.78, 0.38, 0.33];
const TOOL_GRAY: f64 = 0.12;

fn texture_at(waves: &[(f64, f64, f64, f64)], r: f64, c: f64) -> f64 {
    let norm: f64 = waves.iter().map(|w| w.3).sum();
    let v: f64 = waves.iter().map(|(fx, fy, ph, a)| a * (fx * c + fy * r + ph).sin()).sum();
    0.82 + 0.18 * v / norm
}

/// In-plane membrane drag while grasped: `(grasp row, grasp col, drow, dcol)`
/// in pixels, spread around the grasp point with the dimple width.
type Drag = (f64, f64, f64, f64);

impl Renderer {
    pub fn new(scene: &SceneConfig) -> Result<Self> {
        scene.validate()?;
        let (h, w) = (scene.height, scene.width);
        let mut rng = rng_for(scene.texture_seed);
        let waves: Vec<(f64, f64, f64, f64)> = (0..10)
            .map(|_| {
                let ang = rng.gen_range(0.0..std::f64::consts::PI);
                let freq = rng.gen_range(0.08..0.45);
                (freq * ang.cos(), freq * ang.sin(), rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.3..1.0))
            })
            .collect();
        let mut texture = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                texture.push(texture_at(&waves, r as f64, c as f64));
            }
        }
        let blobs = (0..scene.specular_blobs)
            .map(|_| (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64), rng.gen_range(1.0..2.2)))
            .collect();
        Ok(Self { scene: scene.clone(), texture, waves, blobs, entry: (h as f64 + 6.0, w as f64 + 6.0) })
    }

    pub fn scene(&self) -> &SceneConfig {
        &self.scene
    }

    /// Membrane displacement field (m) on the frame grid: a Gaussian dimple
    /// under a pressing tool, a bulge following a grasping tool. Lateral
    /// drag of a grasped membrane is applied to the texture in `shade`.
    fn height_field(&self, state: &ToolState) -> Option<(Vec<f64>, usize)> {
        let amp = if state.grasping().is_some() {
            state.position[2] - state.surface_z
        } else {
            -state.penetration()
        };
        if amp == 0.0 {
            return None;
        }
        let s = &self.scene;
        let g = s.grid;
        let cam = s.camera();
        let (tr, tc) = cam.project(state.position);
        let sig_px = s.dimple_sigma * s.px_per_m;
        let mut f = vec![0.0; g * g];
        for i in 0..g {
            let r = (i as f64 + 0.5) * s.height as f64 / g as f64;
            for j in 0..g {
                let c = (j as f64 + 0.5) * s.width as f64 / g as f64;
                let d2 = (r - tr).powi(2) + (c - tc).powi(2);
                f[i * g + j] = amp * (-d2 / (2.0 * sig_px * sig_px)).exp();
            }
        }
        Some((f, g))
    }

    /// Per-pixel tool coverage in `[0, 1]`.
    pub fn tool_mask(&self, state: &ToolState) -> Vec<f64> {
        let s = &self.scene;
        let (tr, tc) = s.camera().project(state.position);
        // closer to the camera looks wider
        let radius = (2.2 * (1.0 + 25.0 * (state.position[2] - state.surface_z))).clamp(1.2, 4.0);
        let (er, ec) = self.entry;
        let (dr, dc) = (tr - er, tc - ec);
        let len2 = dr * dr + dc * dc;
        let jaw = if state.grasper == 1 { radius * 0.9 } else { 0.0 };
        let (nr, nc) = if len2 > 0.0 { (-dc / len2.sqrt(), dr / len2.sqrt()) } else { (0.0, 1.0) };
        let mut m = vec![0.0; s.height * s.width];
        for r in 0..s.height {
            for c in 0..s.width {
                let (pr, pc) = (r as f64 + 0.5, c as f64 + 0.5);
                let u = if len2 > 0.0 { (((pr - er) * dr + (pc - ec) * dc) / len2).clamp(0.0, 1.0) } else { 1.0 };
                let dist = ((pr - er - u * dr).powi(2) + (pc - ec - u * dc).powi(2)).sqrt();
                let mut a = (radius - dist + 0.5).clamp(0.0, 1.0);
                if jaw > 0.0 {
                    for side in [-1.0, 1.0] {
                        let (jr, jc) = (tr + side * jaw * nr, tc + side * jaw * nc);
                        let dj = ((pr - jr).powi(2) + (pc - jc).powi(2)).sqrt();
                        a = a.max((radius * 0.6 - dj + 0.5).clamp(0.0, 1.0));
                    }
                }
                m[r * s.width + c] = a;
            }
        }
        m
    }

    fn drag(&self, state: &ToolState) -> Option<Drag> {
        let g = state.grasping()?;
        let cam = self.scene.camera();
        let (gr, gc) = cam.project(g);
        let (tr, tc) = cam.project(state.position);
        Some((gr, gc, tr - gr, tc - gc))
    }

    fn shade(&self, field: Option<&(Vec<f64>, usize)>, with_tool: Option<&ToolState>) -> Frame {
        let s = &self.scene;
        let (h, w) = (s.height, s.width);
        let ln = (LIGHT[0].powi(2) + LIGHT[1].powi(2) + LIGHT[2].powi(2)).sqrt();
        let flat = LIGHT[2] / ln;
        let mut px = Vec::with_capacity(h * w * 3);
        let m_per_px = 1.0 / s.px_per_m;
        let mask = with_tool.map(|t| self.tool_mask(t));
        let drag = with_tool.and_then(|t| self.drag(t));
        let sig_px = s.dimple_sigma * s.px_per_m;
        for r in 0..h {
            for c in 0..w {
                let (gx, gy) = match field {
                    Some((f, g)) => {
                        let g = *g;
                        let gi = (r * g / h).min(g - 1);
                        let gj = (c * g / w).min(g - 1);
                        let at = |i: usize, j: usize| f[i * g + j];
                        let step_c = w as f64 / g as f64 * m_per_px;
                        let step_r = h as f64 / g as f64 * m_per_px;
                        let (j0, j1) = (gj.saturating_sub(1), (gj + 1).min(g - 1));
                        let (i0, i1) = (gi.saturating_sub(1), (gi + 1).min(g - 1));
                        let dx = (at(gi, j1) - at(gi, j0)) / ((j1 - j0).max(1) as f64 * step_c);
                        // rows grow toward -y
                        let dy = -(at(i1, gj) - at(i0, gj)) / ((i1 - i0).max(1) as f64 * step_r);
                        (dx, dy)
                    }
                    None => (0.0, 0.0),
                };
                let n = [-gx, -gy, 1.0];
                let nn = (n[0] * n[0] + n[1] * n[1] + 1.0).sqrt();
                let lambert = ((n[0] * LIGHT[0] + n[1] * LIGHT[1] + n[2] * LIGHT[2]) / (nn * ln)).max(0.0);
                let shade = 0.35 + 0.65 * lambert / flat;
                let slope = (gx * gx + gy * gy).sqrt();
                let mut spec = 0.0;
                for (br, bc, bs) in &self.blobs {
                    let d2 = (r as f64 + 0.5 - br).powi(2) + (c as f64 + 0.5 - bc).powi(2);
                    spec += (-d2 / (2.0 * bs * bs)).exp();
                }
                spec *= s.specular_intensity / (1.0 + 3.0 * slope);
                let tex = match drag {
                    Some((gr, gc, dr, dc)) => {
                        let d2 = (r as f64 + 0.5 - gr).powi(2) + (c as f64 + 0.5 - gc).powi(2);
                        let k = (-d2 / (2.0 * sig_px * sig_px)).exp();
                        if k * (dr.abs() + dc.abs()) > 1e-3 {
                            texture_at(&self.waves, r as f64 - k * dr, c as f64 - k * dc)
                        } else {
                            self.texture[r * w + c]
                        }
                    }
                    None => self.texture[r * w + c],
                };
                let a = mask.as_ref().map_or(0.0, |m| m[r * w + c]);
                for ch in 0..3 {
                    let tissue = (TISSUE[ch] * tex * shade + spec).clamp(0.0, 1.0);
                    px.push(tissue * (1.0 - a) + TOOL_GRAY * a);
                }
            }
        }
        Frame { height: h, width: w, channels: 3, pixels: px, kind: FrameKind::RawRgb }
    }

    /// Undisturbed membrane without the tool.
    pub fn background(&self) -> Frame {
        self.shade(None, None)
    }

    pub fn render(&self, state: &ToolState) -> Frame {
        let field = self.height_field(state);
        self.shade(field.as_ref(), Some(state))
    }
}

/// One-off render; use [`Renderer`] for sequences.
pub fn render_frame(state: &ToolState, scene: &SceneConfig) -> Result<Frame> {
    Ok(Renderer::new(scene)?.render(state))
}

/// Generated episode with its sidecar.
#[derive(Debug, Clone)]
pub struct Episode {
    pub record: SequenceRecord,
    pub meta: SequenceMeta,
}

/// Samples a script at the scene rate: jittered tool states, oracle forces
/// and (optionally) rendered frames.
pub fn generate(id: &str, script: &ToolScript, scene: &SceneConfig, seed: u64, render: bool) -> Result<Episode> {
    script.validate(scene)?;
    let renderer = if render { Some(Renderer::new(scene)?) } else { scene.validate().map(|_| None)? };
    let mut rng = rng_for(seed ^ 0x0a11_7e57);
    let jitter = Jitter::new(&mut rng, [3e-4, 3e-4, 1.5e-4]);
    let n = (script.duration() * scene.rate).round() as usize;
    let mut tool = Vec::with_capacity(n);
    let mut force = Vec::with_capacity(n);
    let mut frames = Vec::with_capacity(if render { n } else { 0 });
    let state_at = |t: f64| -> ([f64; 3], [f64; 3]) {
        let (p, v) = script.position_velocity(t);
        let (jp, jv) = jitter.eval(t);
        ([p[0] + jp[0], p[1] + jp[1], p[2] + jp[2]], [v[0] + jv[0], v[1] + jv[1], v[2] + jv[2]])
    };
    for i in 0..n {
        let t = i as f64 / scene.rate;
        let (p, v) = state_at(t);
        let grasper = script.grasper(t);
        let grasp_point = if grasper == 0 { script.grasp_time(t).map(|tg| state_at(tg).0) } else { None };
        let state = ToolState { position: p, grasper, grasp_point, surface_z: script.surface_z };
        if p[0].abs() > scene.extent * 1.1 || p[1].abs() > scene.extent * 1.1 {
            return Err(Error::invalid(format!("episode {id}: tool leaves the scene at t = {t:.2}")));
        }
        force.push(force_oracle(&state, v, scene));
        tool.push(ToolSample::new(i as u64, p, grasper));
        if let Some(r) = &renderer {
            frames.push(r.render(&state));
        }
    }
    let record = SequenceRecord { id: id.to_string(), task: script.task, frames, tool, force, rate: scene.rate };
    let meta = SequenceMeta {
        id: id.to_string(),
        task: script.task,
        rate: scene.rate,
        width: scene.width,
        height: scene.height,
        seed: Some(seed),
        camera: Some(scene.camera()),
    };
    Ok(Episode { record, meta })
}

/// Episode counts and durations of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub scene: SceneConfig,
    pub seed: u64,
    pub push_train: usize,
    pub push_test: usize,
    pub pull_train: usize,
    pub pull_test: usize,
    /// Durations in seconds.
    pub push_train_s: f64,
    pub push_test_s: f64,
    pub pull_train_s: f64,
    pub pull_test_s: f64,
    /// Half-range of the per-episode surface height offset (m).
    pub surface_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            seed: 1,
            push_train: 16,
            push_test: 12,
            pull_train: 12,
            pull_test: 4,
            push_train_s: 25.6,
            push_test_s: 15.0,
            pull_train_s: 30.0,
            pull_test_s: 12.5,
            surface_jitter: 0.004,
        }
    }
}

/// One planned episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodePlan {
    pub id: String,
    pub task: Task,
    pub split: Split,
    pub seed: u64,
    pub duration: f64,
}

impl EpisodePlan {
    pub fn samples(&self, rate: f64) -> usize {
        (self.duration * rate).round() as usize
    }
}

impl SynthConfig {
    /// Keys accepted by [`SynthConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "seed", "push_train", "push_test", "pull_train", "pull_test", "push_train_s", "push_test_s", "pull_train_s",
        "pull_test_s", "surface_jitter", "height", "width", "grid", "k1", "k3", "damping", "ks", "friction", "rate",
        "texture_seed", "specular_blobs", "specular_intensity", "px_per_m",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("invalid value '{v}' for {key}")))
        }
        let s = &mut self.scene;
        match key {
            "seed" => self.seed = num(key, value)?,
            "push_train" => self.push_train = num(key, value)?,
            "push_test" => self.push_test = num(key, value)?,
            "pull_train" => self.pull_train = num(key, value)?,
            "pull_test" => self.pull_test = num(key, value)?,
            "push_train_s" => self.push_train_s = num(key, value)?,
            "push_test_s" => self.push_test_s = num(key, value)?,
            "pull_train_s" => self.pull_train_s = num(key, value)?,
            "pull_test_s" => self.pull_test_s = num(key, value)?,
            "surface_jitter" => self.surface_jitter = num(key, value)?,
            "height" => s.height = num(key, value)?,
            "width" => s.width = num(key, value)?,
            "grid" => s.grid = num(key, value)?,
            "k1" => s.k1 = num(key, value)?,
            "k3" => s.k3 = num(key, value)?,
            "damping" => s.damping = num(key, value)?,
            "ks" => s.ks = num(key, value)?,
            "friction" => s.friction = num(key, value)?,
            "rate" => s.rate = num(key, value)?,
            "texture_seed" => s.texture_seed = num(key, value)?,
            "specular_blobs" => s.specular_blobs = num(key, value)?,
            "specular_intensity" => s.specular_intensity = num(key, value)?,
            "px_per_m" => s.px_per_m = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown synth key '{key}'"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, ignore: &[&str]) -> Result<()> {
        for (k, v) in parse_kv(text)? {
            if !ignore.contains(&k.as_str()) {
                self.set(&k, &v)?;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        for d in [self.push_train_s, self.push_test_s, self.pull_train_s, self.pull_test_s] {
            if !(d >= 2.0) {
                return Err(Error::Config(format!("episode duration {d} s is too short")));
            }
        }
        if !(0.0..0.01).contains(&self.surface_jitter) {
            return Err(Error::Config("surface_jitter must lie in [0, 0.01) m".into()));
        }
        Ok(())
    }

    pub fn plan(&self) -> Vec<EpisodePlan> {
        let groups = [
            (Task::Pushing, Split::Train, self.push_train, self.push_train_s),
            (Task::Pushing, Split::Test, self.push_test, self.push_test_s),
            (Task::Pulling, Split::Train, self.pull_train, self.pull_train_s),
            (Task::Pulling, Split::Test, self.pull_test, self.pull_test_s),
        ];
        let mut out = Vec::new();
        for (task, split, count, duration) in groups {
            for k in 0..count {
                let tag = if task == Task::Pushing { "push" } else { "pull" };
                let sp = if split == Split::Train { "train" } else { "test" };
                out.push(EpisodePlan {
                    id: format!("{tag}_{sp}_{k:02}"),
                    task,
                    split,
                    seed: self.seed.wrapping_mul(1_000_003).wrapping_add(out.len() as u64 * 7919),
                    duration,
                });
            }
        }
        out
    }

    /// Script for a planned episode (surface offset and waypoints from its seed).
    pub fn script(&self, plan: &EpisodePlan) -> ToolScript {
        let mut rng = rng_for(plan.seed);
        let z0 = if self.surface_jitter > 0.0 { rng.gen_range(-self.surface_jitter..self.surface_jitter) } else { 0.0 };
        match plan.task {
            Task::Pushing => push_script(&mut rng, plan.duration, z0),
            Task::Pulling => pull_script(&mut rng, plan.duration, z0),
        }
    }
}

/// Writes every planned episode under `root` plus the manifest.
pub fn generate_dataset(root: &Path, cfg: &SynthConfig) -> Result<Vec<ManifestEntry>> {
    cfg.validate()?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut entries = Vec::new();
    for plan in cfg.plan() {
        let script = cfg.script(&plan);
        let ep = generate(&plan.id, &script, &cfg.scene, plan.seed, true)?;
        write_sequence(&sequence_dir(root, &plan.id), &ep.record, &ep.meta)?;
        log::info!("wrote {} ({} samples)", plan.id, ep.record.len());
        entries.push(ManifestEntry {
            id: plan.id.clone(),
            task: plan.task,
            seed: plan.seed,
            length: ep.record.len(),
            split: plan.split,
        });
    }
    write_manifest(&root.join(MANIFEST_FILE), &entries)?;
    Ok(entries)
}

/// Mean absolute value of every force component.
pub fn mean_abs_force(forces: &[ForceVector]) -> [f64; FORCE_DIM] {
    let mut m = [0.0; FORCE_DIM];
    for f in forces {
        for (a, v) in m.iter_mut().zip(f.0) {
            *a += v.abs();
        }
    }
    m.map(|v| v / forces.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> SceneConfig {
        SceneConfig { damping: 0.0, ..Default::default() }
    }

    #[test]
    fn free_tool_has_no_force() {
        let s = ToolState::free([0.0, 0.0, 0.01], 0.0);
        assert_eq!(force_oracle(&s, [0.01, 0.0, -0.02], &scene()), ForceVector::ZERO);
    }

    #[test]
    fn static_push_force() {
        let s = ToolState::free([0.0, 0.0, -0.01], 0.0);
        let f = force_oracle(&s, [0.0; 3], &scene());
        assert!((f.0[2] + 5.1).abs() < 1e-12);
        assert_eq!(&f.0[..2], &[0.0, 0.0]);
    }

    #[test]
    fn grasp_shear_force_and_torque() {
        let s = ToolState { position: [0.002, 0.0, 0.0], grasper: 0, grasp_point: Some([0.0; 3]), surface_z: 0.0 };
        let f = force_oracle(&s, [0.0; 3], &scene());
        assert!((f.0[0] + 1.6).abs() < 1e-12);
        let r = scene().lever;
        let tau = cross(r, [f.0[0], f.0[1], f.0[2]]);
        assert_eq!(&f.0[3..], &tau);
        // tau = r x (-1.6, 0, 0) = (0, -0.08, 0.032)
        assert!((f.0[4] + 0.08).abs() < 1e-12 && (f.0[5] - 0.032).abs() < 1e-12);
    }

    #[test]
    fn friction_opposes_sliding() {
        let s = ToolState::free([0.0, 0.0, -0.005], 0.0);
        let f = force_oracle(&s, [0.05, 0.0, 0.0], &scene());
        assert!(f.0[0] < 0.0 && f.0[0].abs() <= 0.05 * f.0[2].abs() + 1e-12);
    }

    #[test]
    fn quasi_static_cycle_does_no_net_work() {
        let sc = scene();
        let n = 100_000;
        let depth = 0.012;
        let fz = |z: f64| force_oracle(&ToolState::free([0.0, 0.0, z], 0.0), [0.0; 3], &sc).0[2];
        let mut work = 0.0;
        let path: Vec<f64> = (0..=n).map(|k| -depth * k as f64 / n as f64).chain((0..=n).rev().map(|k| -depth * k as f64 / n as f64)).collect();
        for w in path.windows(2) {
            work += 0.5 * (fz(w[0]) + fz(w[1])) * (w[1] - w[0]);
        }
        assert!(work.abs() < 1e-6, "{work}");
    }

    #[test]
    fn oracle_is_continuous_in_position() {
        let sc = SceneConfig::default();
        for z in [-0.01, -1e-9, 0.0, 1e-9] {
            let a = force_oracle(&ToolState::free([0.0, 0.0, z], 0.0), [0.0; 3], &sc);
            let b = force_oracle(&ToolState::free([0.0, 0.0, z + 1e-9], 0.0), [0.0; 3], &sc);
            assert!(a.0.iter().zip(b.0).all(|(x, y)| (x - y).abs() < 1e-5));
        }
    }

    #[test]
    fn rendering_is_deterministic_and_shows_the_dimple() {
        let sc = SceneConfig::default();
        let r = Renderer::new(&sc).unwrap();
        let up = ToolState::free([0.0, 0.0, 0.0], 0.0);
        let down = ToolState::free([0.0, 0.0, -0.01], 0.0);
        assert_eq!(r.render(&up), r.render(&up));
        let a = r.render(&up);
        let b = r.render(&down);
        let mask_a = r.tool_mask(&up);
        let mask_b = r.tool_mask(&down);
        let cam = sc.camera();
        let (tr, tc) = cam.project([0.0; 3]);
        let rad = sc.dimple_sigma * sc.px_per_m * 2.0;
        let (mut inside, mut differ) = (0, 0);
        for row in 0..sc.height {
            for col in 0..sc.width {
                let d = ((row as f64 + 0.5 - tr).powi(2) + (col as f64 + 0.5 - tc).powi(2)).sqrt();
                let k = row * sc.width + col;
                if d < rad && mask_a[k] == 0.0 && mask_b[k] == 0.0 {
                    inside += 1;
                    if (0..3).any(|ch| a.pixels[k * 3 + ch] != b.pixels[k * 3 + ch]) {
                        differ += 1;
                    }
                }
            }
        }
        assert!(inside > 0 && differ * 100 >= inside, "{differ}/{inside}");
    }

    #[test]
    fn lateral_pull_drags_the_texture_near_the_grasp_point() {
        let sc = SceneConfig::default();
        let r = Renderer::new(&sc).unwrap();
        let grasped = |x: f64| ToolState { position: [x, 0.0, 0.003], grasper: 0, grasp_point: Some([0.0; 3]), surface_z: 0.0 };
        let (a, b) = (grasped(0.0), grasped(0.002));
        let (fa, fb) = (r.render(&a), r.render(&b));
        let (ma, mb) = (r.tool_mask(&a), r.tool_mask(&b));
        let (gr, gc) = sc.camera().project([0.0; 3]);
        let sig = sc.dimple_sigma * sc.px_per_m;
        let mut near = 0;
        for row in 0..sc.height {
            for col in 0..sc.width {
                let k = row * sc.width + col;
                if ma[k] > 0.0 || mb[k] > 0.0 {
                    continue;
                }
                let d = ((row as f64 + 0.5 - gr).powi(2) + (col as f64 + 0.5 - gc).powi(2)).sqrt();
                let same = fa.pixels[k * 3..k * 3 + 3] == fb.pixels[k * 3..k * 3 + 3];
                if d < sig && !same {
                    near += 1;
                }
            }
        }
        assert!(near > 10, "{near} pixels changed near the grasp point");
        let (_, _, dr, dc) = r.drag(&b).unwrap();
        assert!(((dr * dr + dc * dc).sqrt() - 0.002 * sc.px_per_m).abs() < 0.5, "drag ({dr}, {dc})");
        assert!(r.drag(&ToolState { grasp_point: None, ..b }).is_none());
    }

    #[test]
    fn hovering_tool_only_changes_its_silhouette() {
        let sc = SceneConfig::default();
        let r = Renderer::new(&sc).unwrap();
        let s = ToolState::free([0.005, -0.004, 0.02], 0.0);
        let bg = r.background();
        let f = r.render(&s);
        let mask = r.tool_mask(&s);
        for (k, m) in mask.iter().enumerate() {
            if *m == 0.0 {
                assert_eq!(&f.pixels[k * 3..k * 3 + 3], &bg.pixels[k * 3..k * 3 + 3]);
            }
        }
        assert!(mask.iter().any(|m| *m > 0.0));
    }

    #[test]
    fn push_episode_is_dominated_by_fz() {
        let sc = SceneConfig::default();
        let script = push_script(&mut rng_for(3), 20.0, 0.001);
        let ep = generate("p", &script, &sc, 3, false).unwrap();
        assert_eq!(ep.record.len(), 1000);
        let m = mean_abs_force(&ep.record.force);
        assert!(m[2] > 3.0 * m[0] && m[2] > 3.0 * m[1], "{m:?}");
        for f in &ep.record.force {
            assert!(f.0[..3].iter().all(|v| (-10.0..=2.5).contains(v)), "{f:?}");
        }
    }

    #[test]
    fn pull_episode_loads_every_axis_while_grasped() {
        let sc = SceneConfig::default();
        let script = pull_script(&mut rng_for(4), 20.0, -0.002);
        script.validate(&sc).unwrap();
        let ep = generate("q", &script, &sc, 4, false).unwrap();
        let grasped: Vec<ForceVector> =
            ep.record.tool.iter().zip(&ep.record.force).filter(|(t, _)| t.grasper == 0).map(|(_, f)| *f).collect();
        assert!(!grasped.is_empty());
        let m = mean_abs_force(&grasped);
        assert!(m.iter().all(|v| *v > 1e-3), "{m:?}");
        for f in &ep.record.force {
            assert!(f.0[..3].iter().all(|v| (-10.0..=2.5).contains(v)), "{f:?}");
        }
    }

    #[test]
    fn script_validation() {
        let sc = SceneConfig::default();
        let mut s = push_script(&mut rng_for(1), 10.0, 0.0);
        s.validate(&sc).unwrap();
        s.waypoints[1].position[0] = 1.0;
        assert!(s.validate(&sc).is_err());
        let s = ToolScript { task: Task::Pulling, waypoints: push_script(&mut rng_for(1), 10.0, 0.0).waypoints, surface_z: 0.0 };
        assert!(s.validate(&sc).is_err());
    }

    #[test]
    fn default_plan_matches_dataset_proportions() {
        let cfg = SynthConfig::default();
        let plan = cfg.plan();
        assert_eq!(plan.len(), 44);
        let count = |t: Task, s: Split| plan.iter().filter(|p| p.task == t && p.split == s).count();
        assert_eq!(count(Task::Pushing, Split::Train), 16);
        assert_eq!(count(Task::Pushing, Split::Test), 12);
        assert_eq!(count(Task::Pulling, Split::Train), 12);
        assert_eq!(count(Task::Pulling, Split::Test), 4);
        let total: usize = plan.iter().map(|p| p.samples(50.0)).sum();
        let train: usize = plan.iter().filter(|p| p.split == Split::Train).map(|p| p.samples(50.0)).sum();
        assert_eq!(total, 49_980);
        assert!(((train as f64 / total as f64) - 0.77).abs() < 0.005);
        let mut ids: Vec<_> = plan.iter().map(|p| p.id.clone()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 44);
    }

    #[test]
    fn config_text() {
        let mut c = SynthConfig::default();
        c.apply_text("push_train=0\npush_test = 0\npull_train=0\npull_test=0\nk1=400\n", &[]).unwrap();
        assert!(c.plan().is_empty());
        assert_eq!(c.scene.k1, 400.0);
        assert!(c.apply_text("nope=1", &[]).is_err());
    }
}
