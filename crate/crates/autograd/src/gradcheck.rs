//! Fourth-order central finite-difference oracle for reverse-mode gradients (64-bit only).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Attrs, Graph, Primitive, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Denominator floor for the relative error, so that vanishing gradients are
/// compared in absolute terms instead of amplifying round-off.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: String,
    pub trials: usize,
    pub checked: usize,
    /// Coordinates skipped because the perturbation crossed a relu/|·| kink.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

impl CheckReport {
    fn new(name: &str, tol: f64) -> Self {
        Self { name: name.to_string(), trials: 0, checked: 0, skipped: 0, max_rel_error: 0.0, tol, passed: true }
    }

    fn record(&mut self, err: f64) {
        self.checked += 1;
        if err > self.max_rel_error || err.is_nan() {
            self.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
        }
    }

    fn finish(mut self) -> Self {
        self.passed = self.max_rel_error < self.tol && self.checked > 0;
        self
    }
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<18} {} trials={} coords={} skipped={} max_rel_err={:.3e} (tol {:.0e})",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.trials,
            self.checked,
            self.skipped,
            self.max_rel_error,
            self.tol
        )
    }
}

/// Five-point central difference at `x`; `None` when a perturbation crosses a kink.
fn stencil(x: f64, eps: f64, base_sig: u64, mut eval: impl FnMut(f64) -> Result<(f64, u64)>) -> Result<Option<f64>> {
    let mut f = [0.0; 4];
    for (slot, k) in f.iter_mut().zip([-2.0, -1.0, 1.0, 2.0]) {
        let (v, sig) = eval(x + k * eps)?;
        if sig != base_sig {
            return Ok(None);
        }
        *slot = v;
    }
    Ok(Some((f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * eps)))
}

/// Evaluates `f` on fresh tapes and compares the analytic gradient of every
/// input element against fourth-order central differences.
pub fn check_inputs<Fw>(inputs: &[Tensor<f64>], eps: f64, f: Fw, report: &mut CheckReport) -> Result<()>
where
    Fw: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok((g.value(out).item(), g.kink_signature()))
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let base_sig = g.kink_signature();
    let grads = g.backward(out)?;
    let mut work = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for i in 0..inputs[k].numel() {
            let orig = inputs[k].data()[i];
            let numeric = stencil(orig, eps, base_sig, |x| {
                work[k].data_mut()[i] = x;
                eval(&work)
            })?;
            work[k].data_mut()[i] = orig;
            match numeric {
                Some(n) => report.record(relative_error(analytic[i], n)),
                None => report.skipped += 1,
            }
        }
    }
    Ok(())
}

/// Same as [`check_inputs`] but perturbs up to `per_param` random entries of each
/// trainable parameter in `store`.
pub fn check_params<Fw, R>(
    store: &mut ParamStore<f64>,
    eps: f64,
    per_param: usize,
    rng: &mut R,
    f: Fw,
    report: &mut CheckReport,
) -> Result<()>
where
    Fw: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
    R: Rng + ?Sized,
{
    let eval = |s: &ParamStore<f64>| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let out = f(&mut g, s)?;
        Ok((g.value(out).item(), g.kink_signature()))
    };
    store.zero_grad();
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let base_sig = g.kink_signature();
    g.backward(out)?.accumulate_into(store);
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let n = store.get(id).value.numel();
        let coords: Vec<usize> = if n <= per_param { (0..n).collect() } else { (0..per_param).map(|_| rng.gen_range(0..n)).collect() };
        for i in coords {
            let analytic = store.get(id).grad[i];
            let orig = store.get(id).value.data()[i];
            let numeric = stencil(orig, eps, base_sig, |x| {
                store.get_mut(id).value.data_mut()[i] = x;
                eval(store)
            })?;
            store.get_mut(id).value.data_mut()[i] = orig;
            match numeric {
                Some(n) => report.record(relative_error(analytic, n)),
                None => report.skipped += 1,
            }
        }
    }
    Ok(())
}

/// Runs `trials` randomized finite-difference comparisons for one primitive.
///
/// Inputs are drawn from [-2, 2] (kink-carrying primitives keep |x| >= 0.05,
/// strictly positive for rsqrt); non-scalar outputs are reduced with a fixed
/// random projection.
pub fn finite_difference_check(prim: Primitive, trials: usize, eps: f64, tol: f64, seed: u64) -> CheckReport {
    let mut report = CheckReport::new(prim.name(), tol);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (prim as u64).wrapping_mul(0x9e3779b97f4a7c15));
    for trial in 0..trials {
        let case = primitive_case(prim, trial, &mut rng);
        let proj = case.projection.clone();
        let res = check_inputs(&case.inputs, eps, |g, vars| {
            let out = g.apply(prim, vars, &case.attrs)?;
            project(g, out, proj.as_ref())
        }, &mut report);
        if let Err(e) = res {
            report.name = format!("{} ({e})", prim.name());
            report.max_rel_error = f64::INFINITY;
        }
        report.trials += 1;
    }
    report.finish()
}

/// Finite-difference check over an arbitrary model loss with respect to its parameters.
pub fn model_check<Fw>(
    name: &str,
    trials: usize,
    eps: f64,
    tol: f64,
    seed: u64,
    per_param: usize,
    mut setup: impl FnMut(&mut ChaCha8Rng) -> (ParamStore<f64>, Fw),
) -> CheckReport
where
    Fw: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut report = CheckReport::new(name, tol);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let (mut store, f) = setup(&mut rng);
        if let Err(e) = check_params(&mut store, eps, per_param, &mut rng, f, &mut report) {
            report.name = format!("{name} ({e})");
            report.max_rel_error = f64::INFINITY;
        }
        report.trials += 1;
    }
    report.finish()
}

fn project(g: &mut Graph<f64>, out: Var, proj: Option<&Tensor<f64>>) -> Result<Var> {
    let n = g.value(out).numel();
    if n == 1 {
        return Ok(out);
    }
    let w = g.constant(proj.expect("projection for non-scalar output").clone().reshape(g.shape(out).to_vec())?);
    let p = g.mul(out, w)?;
    let flat = g.reshape(p, &[1, n])?;
    let m = g.mean(flat, 1)?;
    g.scale(m, n as f64)
}

struct Case {
    inputs: Vec<Tensor<f64>>,
    attrs: Attrs,
    projection: Option<Tensor<f64>>,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Uniform in [-2, 2] but at least `gap` away from zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(gap..2.0);
            if rng.gen_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn primitive_case(prim: Primitive, trial: usize, rng: &mut ChaCha8Rng) -> Case {
    let u = |rng: &mut ChaCha8Rng, s: &[usize]| rand_tensor(rng, s, -2.0, 2.0);
    let mut attrs = Attrs::default();
    let inputs = match prim {
        Primitive::MatMul => {
            if trial.is_multiple_of(2) {
                vec![u(rng, &[3, 4]), u(rng, &[4, 5])]
            } else {
                vec![u(rng, &[2, 3, 4]), u(rng, &[2, 4, 5])]
            }
        }
        Primitive::Conv2d => {
            attrs.stride = 2;
            attrs.padding = 1;
            vec![u(rng, &[1, 3, 8, 8]), u(rng, &[2, 3, 4, 4])]
        }
        Primitive::Relu | Primitive::L1Norm => vec![away_from_zero(rng, &[10], 0.05)],
        Primitive::Sigmoid | Primitive::Scale | Primitive::Shift => {
            attrs.scalar = rng.gen_range(-2.0..2.0);
            vec![u(rng, &[10])]
        }
        Primitive::Softmax | Primitive::LogSoftmax | Primitive::Mean | Primitive::Variance => {
            attrs.axis = rng.gen_range(0..3);
            vec![u(rng, &[3, 4, 2])]
        }
        Primitive::Add | Primitive::Sub | Primitive::Mul => match trial % 3 {
            0 => vec![u(rng, &[3, 4]), u(rng, &[3, 4])],
            1 => vec![u(rng, &[2, 3, 4]), u(rng, &[4])],
            _ => vec![u(rng, &[2, 1, 4]), u(rng, &[3, 1])],
        },
        Primitive::Concat => {
            attrs.axis = 1;
            vec![u(rng, &[2, 3]), u(rng, &[2, 2]), u(rng, &[2, 1])]
        }
        Primitive::Flatten | Primitive::Transpose => vec![u(rng, &[2, 3, 4])],
        Primitive::Reshape => {
            attrs.shape = vec![4, 6];
            vec![u(rng, &[2, 3, 4])]
        }
        Primitive::Narrow => {
            attrs.axis = 1;
            attrs.start = 1;
            attrs.len = 3;
            vec![u(rng, &[4, 5])]
        }
        Primitive::Embedding => {
            attrs.indices = (0..6).map(|_| rng.gen_range(0..5)).collect();
            vec![u(rng, &[5, 3])]
        }
        Primitive::Rsqrt => vec![rand_tensor(rng, &[8], 0.2, 2.0)],
        Primitive::CrossEntropy => {
            attrs.indices = (0..4).map(|_| rng.gen_range(0..3)).collect();
            vec![u(rng, &[4, 3])]
        }
        Primitive::BceWithLogits => {
            attrs.targets = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
            vec![u(rng, &[5])]
        }
        Primitive::LstmCell => vec![u(rng, &[2, 12]), u(rng, &[2, 3])],
    };
    // Output shape is known after one evaluation; draw the projection to match.
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = g.apply(prim, &vars, &attrs).expect("primitive case is well formed");
    let n = g.value(out).numel();
    let projection = (n > 1).then(|| rand_tensor(rng, &[n], -1.0, 1.0));
    Case { inputs, attrs, projection }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn composed_function_passes() {
        let mut report = CheckReport::new("probe", 1e-6);
        let x = Tensor::from_f64([3], &[0.5, -1.0, 1.5]).unwrap();
        check_inputs(&[x], 1e-5, |g, v| {
            let s = g.sigmoid(v[0])?;
            g.l1_norm(s)
        }, &mut report)
        .unwrap();
        let report = report.finish();
        assert!(report.passed, "{report}");
    }
}
