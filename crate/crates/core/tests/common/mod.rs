#![allow(dead_code)]

pub mod oracles;

use liftseg::dataset::{synth_scene, Enclosure, SceneSpec, SensorRig, SynthScene};
use liftseg::geometry::RigidTransform;
use liftseg::projection::SphericalImageSet;

/// Scene closed by a room so every ray of the grid returns.
pub fn enclosed_spec() -> SceneSpec {
    SceneSpec { enclosure: Some(Enclosure { half_size: 40.0, height: 8.0 }), ..SceneSpec::default() }
}

pub fn full_grid_scene(seed: u64, rows: usize, cols: usize) -> (SensorRig, SynthScene) {
    let rig = SensorRig::default_with_resolution(rows, cols);
    let scene = synth_scene(seed, &enclosed_spec(), &rig).expect("enclosed scene");
    (rig, scene)
}

pub fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Angle between two unit-ish vectors, degrees.
pub fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    (dot(a, b) / (norm(a) * norm(b))).clamp(-1.0, 1.0).acos().to_degrees()
}

/// `R·p + t` through the 4×4 homogeneous matrix, written out by hand.
pub fn homogeneous_apply(tf: &RigidTransform, p: [f64; 3]) -> [f64; 3] {
    let m = tf.to_matrix();
    let h = [p[0], p[1], p[2], 1.0];
    let mut out = [0.0; 4];
    for (r, o) in out.iter_mut().enumerate() {
        *o = (0..4).map(|c| m[4 * r + c] * h[c]).sum();
    }
    [out[0] / out[3], out[1] / out[3], out[2] / out[3]]
}

pub fn defined_normals(img: &SphericalImageSet) -> impl Iterator<Item = (usize, [f64; 3])> + '_ {
    (0..img.len()).filter(|&i| img.normal_valid[i]).map(|i| (i, img.normals[i]))
}

use liftseg::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Projects `f`'s output onto a fixed random direction so every output
/// element contributes, then returns the scalar and the graph.
fn projected(
    inputs: &[Tensor<f64>],
    f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var,
    leaves: bool,
) -> (Graph<f64>, Var, Vec<Var>) {
    let mut g = Graph::new();
    let vars: Vec<Var> =
        inputs.iter().map(|t| if leaves { g.leaf(t.clone()) } else { g.constant(t.clone()) }).collect();
    let out = f(&mut g, &vars);
    let shape = g.shape(out).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1CE);
    let dir = g.constant(random_tensor(&mut rng, &shape, -1.0, 1.0));
    let prod = g.mul(out, dir).unwrap();
    let loss = g.sum_all(prod);
    (g, loss, vars)
}

/// Largest relative disagreement between reverse-mode gradients and central
/// differences with step `eps`. Magnitudes below `floor` are compared
/// absolutely. `coords` limits the check to that many randomly chosen
/// elements per input.
pub fn gradcheck_with(
    inputs: &[Tensor<f64>],
    eps: f64,
    floor: f64,
    coords: Option<usize>,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Var,
) -> f64 {
    let (mut g, loss, vars) = projected(inputs, &f, true);
    g.backward(loss).unwrap();
    let analytic: Vec<Tensor<f64>> =
        vars.iter().zip(inputs).map(|(v, t)| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()))).collect();
    let eval = |ins: &[Tensor<f64>]| {
        let (g, loss, _) = projected(ins, &f, false);
        g.value(loss).item()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        let idx: Vec<usize> = match coords {
            Some(n) if n < t.numel() => (0..n).map(|_| rng.random_range(0..t.numel())).collect(),
            _ => (0..t.numel()).collect(),
        };
        for j in idx {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += eps;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    worst
}

pub fn gradcheck(inputs: &[Tensor<f64>], f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    gradcheck_with(inputs, 1e-5, 1e-6, None, f)
}
