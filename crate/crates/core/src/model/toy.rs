//! Procedurally generated rigged hand, usable wherever a MANO-format model
//! is not available.
//!
//! Units are meters. The palm lies in the z = 0 plane with the fingers
//! pointing along +y; positive rotation about a finger's flexion axis curls
//! it toward +z. The palm is an elliptic tube from the wrist to the knuckle
//! line, each finger a tapered tube with a ring of vertices at every joint and
//! an apex vertex at the tip.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{canonical_parents, HandModel, ModelParts, NUM_FINGERS, NUM_JOINTS, NUM_SHAPE};
use crate::error::{Error, Result};

pub const MIN_VERTEX_BUDGET: usize = 64;

const PALM_LENGTH: f64 = 0.09;
const PALM_HALF_WIDTH: f64 = 0.042;
const PALM_HALF_THICKNESS: f64 = 0.012;

struct FingerSpec {
    base: [f64; 3],
    /// In-plane angle of the finger direction, measured from +y toward -x.
    heading: f64,
    bones: [f64; 3],
    radius: f64,
}

const FINGERS: [FingerSpec; NUM_FINGERS] = [
    FingerSpec {
        base: [-0.036, 0.028, 0.0],
        heading: 0.8,
        bones: [0.036, 0.031, 0.026],
        radius: 0.0105,
    },
    FingerSpec {
        base: [-0.028, PALM_LENGTH, 0.0],
        heading: 0.08,
        bones: [0.040, 0.025, 0.020],
        radius: 0.0085,
    },
    FingerSpec {
        base: [-0.009, PALM_LENGTH + 0.002, 0.0],
        heading: 0.0,
        bones: [0.045, 0.028, 0.022],
        radius: 0.0088,
    },
    FingerSpec {
        base: [0.010, PALM_LENGTH, 0.0],
        heading: -0.08,
        bones: [0.042, 0.026, 0.021],
        radius: 0.0082,
    },
    FingerSpec {
        base: [0.028, PALM_LENGTH - 0.007, 0.0],
        heading: -0.18,
        bones: [0.033, 0.020, 0.018],
        radius: 0.0072,
    },
];

/// Direction a finger points along and its in-plane flexion axis.
pub fn finger_frame(finger: usize) -> (Vector3<f64>, Vector3<f64>) {
    let h = FINGERS[finger].heading;
    (
        Vector3::new(-h.sin(), h.cos(), 0.0),
        Vector3::new(h.cos(), h.sin(), 0.0),
    )
}

/// Ring size per finger, rings per finger, palm ring size.
fn resolution(budget: usize) -> Option<(usize, usize, usize)> {
    let mut best: Option<(usize, usize, usize, usize)> = None;
    for ring in 3..=48 {
        let palm = (2 * ring).max(6);
        let palm_cost = 2 * palm + 2;
        for stations in 3..=64 {
            let used = palm_cost + NUM_FINGERS * (stations * ring + 1);
            if used > budget {
                break;
            }
            let imbalance = stations.abs_diff(ring + 2);
            let better = match best {
                None => true,
                Some((_, _, u, imb)) => used > u || (used == u && imbalance < imb),
            };
            if better {
                best = Some((ring, stations, used, imbalance));
            }
        }
    }
    best.map(|(ring, stations, _, _)| (ring, stations, (2 * ring).max(6)))
}

/// Axial station positions: the three joint locations plus extra rings
/// spread over the bones.
fn stations(bones: &[f64; 3], count: usize) -> Vec<f64> {
    let starts = [0.0, bones[0], bones[0] + bones[1]];
    let mut extras = [0usize; 3];
    for _ in 3..count {
        let b = (0..3)
            .max_by(|&a, &b| {
                let la = bones[a] / (extras[a] + 1) as f64;
                let lb = bones[b] / (extras[b] + 1) as f64;
                la.partial_cmp(&lb).unwrap().then(b.cmp(&a))
            })
            .unwrap();
        extras[b] += 1;
    }
    let mut out = Vec::with_capacity(count);
    for b in 0..3 {
        out.push(starts[b]);
        for i in 0..extras[b] {
            out.push(starts[b] + bones[b] * (i + 1) as f64 / (extras[b] + 1) as f64);
        }
    }
    out
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Builds a deterministic toy hand with at most `vertex_budget` vertices.
pub fn make_toy_model(seed: u64, vertex_budget: usize) -> Result<HandModel> {
    if vertex_budget < MIN_VERTEX_BUDGET {
        return Err(Error::InvalidConfig(format!(
            "vertex budget {vertex_budget} is below the minimum of {MIN_VERTEX_BUDGET}"
        )));
    }
    let (ring_n, station_n, palm_n) = resolution(vertex_budget).expect("minimum budget always admits a resolution");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, 0.03).unwrap();
    let unit = Normal::new(0.0, 1.0).unwrap();

    // Per-component shape coefficients: palm width, palm length, then per
    // finger (length, width).
    let mut palm_width = [0.0; NUM_SHAPE];
    let mut palm_length = [0.0; NUM_SHAPE];
    let mut finger_length = [[0.0; NUM_SHAPE]; NUM_FINGERS];
    let mut finger_width = [[0.0; NUM_SHAPE]; NUM_FINGERS];
    for k in 0..NUM_SHAPE {
        let sigma = 0.04 / (1.0 + 0.35 * k as f64);
        palm_width[k] = sigma * unit.sample(&mut rng);
        palm_length[k] = sigma * unit.sample(&mut rng);
        for f in 0..NUM_FINGERS {
            finger_length[f][k] = sigma * unit.sample(&mut rng);
            finger_width[f][k] = sigma * unit.sample(&mut rng);
        }
    }
    let palm_dirs = |p: &Vector3<f64>| -> [[f64; NUM_SHAPE]; 3] {
        let mut d = [[0.0; NUM_SHAPE]; 3];
        for k in 0..NUM_SHAPE {
            d[0][k] = p.x * palm_width[k];
            d[1][k] = p.y * palm_length[k];
            d[2][k] = p.z * palm_width[k];
        }
        d
    };

    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut weights: Vec<[f64; NUM_JOINTS]> = Vec::new();
    let mut shape_dirs: Vec<[[f64; NUM_SHAPE]; 3]> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut regressor = vec![Vec::<(usize, f64)>::new(); NUM_JOINTS];
    let mut tips = [0usize; NUM_FINGERS];

    let mut push = |p: Vector3<f64>, w: [f64; NUM_JOINTS], d: [[f64; NUM_SHAPE]; 3]| {
        vertices.push(p.into());
        weights.push(w);
        shape_dirs.push(d);
        vertices.len() - 1
    };
    let mut root_only = [0.0; NUM_JOINTS];
    root_only[0] = 1.0;

    // Palm: wrist center at the origin, two elliptic rings, knuckle-line center.
    let wrist = push(Vector3::zeros(), root_only, [[0.0; NUM_SHAPE]; 3]);
    regressor[0].push((wrist, 1.0));
    let mut palm_rings = [0usize; 2];
    for (r, y) in [0.0, PALM_LENGTH].into_iter().enumerate() {
        let mut start = 0;
        for i in 0..palm_n {
            let phi = std::f64::consts::TAU * i as f64 / palm_n as f64;
            let p = Vector3::new(PALM_HALF_WIDTH * phi.cos(), y, PALM_HALF_THICKNESS * phi.sin());
            let idx = push(p, root_only, palm_dirs(&p));
            if i == 0 {
                start = idx;
            }
        }
        palm_rings[r] = start;
    }
    let top = Vector3::new(0.0, PALM_LENGTH, 0.0);
    let palm_top = push(top, root_only, palm_dirs(&top));
    for i in 0..palm_n {
        let j = (i + 1) % palm_n;
        let (a, b) = (palm_rings[0], palm_rings[1]);
        faces.push([wrist, a + j, a + i]);
        faces.push([a + i, a + j, b + j]);
        faces.push([a + i, b + j, b + i]);
        faces.push([palm_top, b + i, b + j]);
    }

    for (f, spec) in FINGERS.iter().enumerate() {
        let (dir, side) = finger_frame(f);
        let normal = Vector3::z();
        let bones = spec.bones.map(|b| b * (1.0 + jitter.sample(&mut rng)));
        let radius = spec.radius * (1.0 + jitter.sample(&mut rng));
        let total: f64 = bones.iter().sum();
        let base = Vector3::from(spec.base);
        let joints = [1 + 3 * f, 2 + 3 * f, 3 + 3 * f];
        let boundaries = [0.0, bones[0], bones[0] + bones[1]];
        let half = 0.25 * bones.iter().cloned().fold(f64::INFINITY, f64::min);

        let blend = |a: f64| -> [f64; NUM_JOINTS] {
            let mut w = [0.0; NUM_JOINTS];
            // owner before each boundary: palm, proximal, middle
            let owners = [0, joints[0], joints[1], joints[2]];
            let mut seg = 0;
            for (i, b) in boundaries.iter().enumerate() {
                if a >= *b - half {
                    seg = i;
                }
            }
            let b = boundaries[seg];
            let t = smoothstep((a - (b - half)) / (2.0 * half));
            w[owners[seg]] += 1.0 - t;
            w[owners[seg + 1]] += t;
            w
        };
        let finger_dirs = |a: f64, radial: &Vector3<f64>| -> [[f64; NUM_SHAPE]; 3] {
            let mut d = palm_dirs(&base);
            for k in 0..NUM_SHAPE {
                let disp = finger_length[f][k] * a * dir + finger_width[f][k] * radial;
                for axis in 0..3 {
                    d[axis][k] += disp[axis];
                }
            }
            d
        };

        let positions = stations(&bones, station_n);
        let mut ring_starts = Vec::with_capacity(positions.len());
        for &a in &positions {
            let r = radius * (1.0 - 0.3 * a / total);
            let center = base + a * dir;
            let w = blend(a);
            let mut start = 0;
            for i in 0..ring_n {
                let psi = std::f64::consts::TAU * i as f64 / ring_n as f64;
                let radial = r * (psi.cos() * side + psi.sin() * normal);
                let idx = push(center + radial, w, finger_dirs(a, &radial));
                if i == 0 {
                    start = idx;
                }
            }
            for (slot, b) in boundaries.iter().enumerate() {
                if a == *b {
                    let share = 1.0 / ring_n as f64;
                    regressor[joints[slot]].extend((0..ring_n).map(|i| (start + i, share)));
                }
            }
            ring_starts.push(start);
        }
        let mut tip_w = [0.0; NUM_JOINTS];
        tip_w[joints[2]] = 1.0;
        let apex = push(base + total * dir, tip_w, finger_dirs(total, &Vector3::zeros()));
        tips[f] = apex;

        for pair in ring_starts.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            for i in 0..ring_n {
                let j = (i + 1) % ring_n;
                faces.push([a + i, a + j, b + j]);
                faces.push([a + i, b + j, b + i]);
            }
        }
        let last = *ring_starts.last().unwrap();
        for i in 0..ring_n {
            faces.push([last + i, last + (i + 1) % ring_n, apex]);
        }
    }

    let nv = vertices.len();
    debug_assert!(nv <= vertex_budget);
    let joint_regressor = regressor
        .into_iter()
        .map(|entries| {
            let mut row = vec![0.0; nv];
            for (v, w) in entries {
                row[v] += w;
            }
            row
        })
        .collect();

    HandModel::new(ModelParts {
        name: format!("toy-hand-seed{seed}-v{nv}"),
        template_vertices: vertices,
        faces,
        blend_weights: weights,
        parents: canonical_parents(),
        shape_dirs,
        joint_regressor,
        tip_vertex_ids: tips,
    })
}
