use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::nn::GruCell;
use super::params::ParamStore;
use super::tensor::Tensor;
use super::DiffError;

/// Central-difference step used at float64.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for relative errors, so that entries whose true
/// gradient is zero are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub entries_checked: usize,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradient of the scalar built by `f` with central
/// finite differences for every entry of every parameter in `store`.
pub fn grad_check<F>(store: &ParamStore, f: F, step: f64) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, DiffError>,
{
    let mut g = Graph::new();
    let root = f(&mut g, store)?;
    if !g.value(root).is_finite() {
        return Err(DiffError::NonFinite("grad_check objective".into()));
    }
    let analytic = g.backward(root)?.for_params(store);

    let eval = |s: &ParamStore| -> Result<f64, DiffError> {
        let mut g = Graph::no_grad();
        let r = f(&mut g, s)?;
        let v = g.value(r).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(DiffError::NonFinite("grad_check objective".into()))
        }
    };

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        entries_checked: 0,
        worst: None,
    };
    for pid in 0..store.len() {
        for j in 0..store.get(pid).len() {
            let orig = store.get(pid).data()[j];
            probe.get_mut(pid).data_mut()[j] = orig + step;
            let plus = eval(&probe)?;
            probe.get_mut(pid).data_mut()[j] = orig - step;
            let minus = eval(&probe)?;
            probe.get_mut(pid).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[pid].data()[j];
            let rel = relative_error(a, numeric);
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((store.name(pid).to_string(), j));
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}

/// Op families exercised by [`op_suite`].
pub const OPS: [&str; 16] = [
    "matmul+bias",
    "layer_norm",
    "silu",
    "tanh",
    "sigmoid",
    "concat*mul",
    "kl_categorical",
    "log_softmax",
    "softmax",
    "sub+square",
    "entropy",
    "bce_with_logits",
    "gather",
    "gru",
    "stack+slice_rows",
    "blend_rows",
];

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::from_rows(rows, cols, data)
}

/// Fixed random weights so that a scalar objective mixes every output.
fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var, DiffError> {
    let v = g.value(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_tensor(&mut rng, v.rows(), v.cols(), 1.0);
    let p = g.mul_const(y, w)?;
    g.sum(p)
}

fn op_objective(kind: usize, g: &mut Graph, s: &ParamStore, gru: &GruCell, seed: u64) -> Result<Var, DiffError> {
    let a = g.param(s, 0);
    let b = g.param(s, 1);
    let y = match kind {
        0 => {
            let w = g.param(s, 2);
            let m = g.matmul(a, w)?;
            g.add_bias(m, b)?
        }
        1 => {
            let sc = g.param(s, 3);
            let sh = g.param(s, 4);
            g.layer_norm(a, sc, sh)?
        }
        2 => g.silu(a)?,
        3 => g.tanh(a)?,
        4 => g.sigmoid(a)?,
        5 => {
            let ab = g.concat(&[a, a])?;
            let w = g.param(s, 5);
            g.mul(ab, w)?
        }
        6 => {
            let c = g.param(s, 6);
            let k = g.kl_categorical(a, c, 2)?;
            g.scale(k, 1.7)?
        }
        7 => g.log_softmax_groups(a, 2)?,
        8 => g.softmax_groups(a, 2)?,
        9 => {
            let c = g.param(s, 6);
            let d = g.sub(a, c)?;
            g.square(d)?
        }
        10 => g.entropy_groups(a, 2)?,
        11 => {
            let t = Tensor::full(g.value(a).rows(), g.value(a).cols(), 0.3);
            g.bce_with_logits(a, t)?
        }
        12 => {
            let rows = g.value(a).rows();
            let idx: Vec<usize> = (0..rows).map(|r| r % g.value(a).cols()).collect();
            g.gather(a, &idx)?
        }
        13 => {
            let c = g.param(s, 6);
            gru.forward(g, s, a, c)?
        }
        14 => {
            let c = g.param(s, 6);
            let st = g.stack_rows(&[a, c, a])?;
            let rows = g.value(a).rows();
            g.slice_rows(st, 1, rows + 1)?
        }
        _ => {
            let rows = g.value(a).rows();
            let flags: Vec<bool> = (0..rows).map(|r| r % 2 == 0).collect();
            g.blend_rows(a, b, &flags)?
        }
    };
    weighted_sum(g, y, seed)
}

/// Finite-difference check of op family `kind` on random `rows × cols`
/// inputs (`cols` even).
pub fn op_trial(kind: usize, rows: usize, cols: usize, seed: u64) -> Result<GradCheckReport, DiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    store.add("a", random_tensor(&mut rng, rows, cols, 1.5));
    store.add("b", random_tensor(&mut rng, 1, cols, 1.0));
    store.add("w", random_tensor(&mut rng, cols, cols, 1.0));
    store.add("scale", random_tensor(&mut rng, 1, cols, 1.5));
    store.add("shift", random_tensor(&mut rng, 1, cols, 1.0));
    store.add("w2", random_tensor(&mut rng, rows, 2 * cols, 1.0));
    store.add("c", random_tensor(&mut rng, rows, cols, 1.5));
    let gru = GruCell::new(&mut store, "gru", cols, cols, &mut rng);
    grad_check(&store, |g, s| op_objective(kind, g, s, &gru, seed), FD_STEP)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpResult {
    pub name: &'static str,
    pub trials: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpSuiteReport {
    pub ops: Vec<OpResult>,
    pub trials: usize,
    pub max_rel_err: f64,
}

impl OpSuiteReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// `trials` randomized checks cycling through every op family.
pub fn op_suite(trials: usize, seed: u64) -> Result<OpSuiteReport, DiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ops: Vec<OpResult> = OPS
        .iter()
        .map(|&name| OpResult {
            name,
            trials: 0,
            max_rel_err: 0.0,
        })
        .collect();
    for t in 0..trials {
        let kind = t % OPS.len();
        let rows = rng.gen_range(1..4);
        let cols = 2 * rng.gen_range(1..4);
        let r = op_trial(kind, rows, cols, rng.gen())?;
        ops[kind].trials += 1;
        ops[kind].max_rel_err = ops[kind].max_rel_err.max(r.max_rel_err);
    }
    let max_rel_err = ops.iter().map(|o| o.max_rel_err).fold(0.0, f64::max);
    Ok(OpSuiteReport {
        ops: ops.into_iter().filter(|o| o.trials > 0).collect(),
        trials,
        max_rel_err,
    })
}
