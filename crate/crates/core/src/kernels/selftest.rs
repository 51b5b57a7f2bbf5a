//! Invariant suite over the kernels, shared by the `selftest` subcommand and
//! the test targets.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    finite_diff_grad, lora_apply, lora_delta, lora_param_count, max_relative_error, rmsnorm, rmsnorm_backward, rope_2d,
    sgd_step, swiglu_ffn, Activation, FusionMlp, KernelError, LoraAdapter, LoraTarget, Matrix, RmsNormParams,
    SwiGluFfn, DEFAULT_FD_STEP, DEFAULT_ROPE_BASE,
};

pub const GRADIENT_INSTANCES: usize = 20;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
/// Denominator floor for relative gradient error, so coordinates whose true
/// gradient is essentially zero are judged on absolute error.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;
pub const SINGULAR_VALUE_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{status}  {:<width$}  {}", c.name, c.detail)?;
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        write!(f, "{passed}/{} checks passed", self.checks.len())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, uniform(rng, rows * cols)).expect("shape is consistent")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Numeric gradient of `f` at `point` compared with `analytic`.
fn gradient_error(analytic: &[f64], point: &[f64], f: impl Fn(&[f64]) -> f64) -> Result<f64, KernelError> {
    let numeric = finite_diff_grad(f, point, DEFAULT_FD_STEP)?;
    Ok(max_relative_error(analytic, &numeric, RELATIVE_ERROR_FLOOR))
}

/// Worst relative error over the input and `gamma` gradients of the scalar
/// `Σ cᵢ·rmsnorm(x)ᵢ` for one random instance.
pub fn rmsnorm_gradient_error(seed: u64) -> Result<f64, KernelError> {
    let mut r = rng(seed);
    let n = r.gen_range(2..12);
    let x = uniform(&mut r, n);
    let gamma = uniform(&mut r, n);
    let c = uniform(&mut r, n);
    let eps = 1e-6;
    let params = RmsNormParams::new(gamma.clone(), eps);
    let grads = rmsnorm_backward(&x, &params, &c)?;

    let loss_x = |p: &[f64]| dot(&rmsnorm(p, &params).unwrap(), &c);
    let loss_g = |g: &[f64]| dot(&rmsnorm(&x, &RmsNormParams::new(g.to_vec(), eps)).unwrap(), &c);
    Ok(gradient_error(&grads.x, &x, loss_x)?.max(gradient_error(&grads.gamma, &gamma, loss_g)?))
}

/// Same for the SwiGLU unit, over the input and all four parameters.
pub fn swiglu_gradient_error(seed: u64) -> Result<f64, KernelError> {
    let mut r = rng(seed);
    let d = r.gen_range(1..6);
    let h = r.gen_range(1..6);
    let x = uniform(&mut r, d);
    let ffn = SwiGluFfn::new(
        random_matrix(&mut r, d, h),
        uniform(&mut r, h),
        random_matrix(&mut r, d, h),
        uniform(&mut r, h),
        r.gen_range(0.5..2.0),
    )?;
    let c = uniform(&mut r, h);
    let g = ffn.backward(&x, &c)?;
    let loss = |f: &SwiGluFfn, x: &[f64]| dot(&f.forward(x).unwrap(), &c);

    let mut worst = gradient_error(&g.x, &x, |p| loss(&ffn, p))?;
    worst = worst.max(gradient_error(g.w1.data(), ffn.w1.data(), |p| {
        let mut f = ffn.clone();
        f.w1 = Matrix::new(d, h, p.to_vec()).unwrap();
        loss(&f, &x)
    })?);
    worst = worst.max(gradient_error(&g.b1, &ffn.b1, |p| {
        let mut f = ffn.clone();
        f.b1 = p.to_vec();
        loss(&f, &x)
    })?);
    worst = worst.max(gradient_error(g.w2.data(), ffn.w2.data(), |p| {
        let mut f = ffn.clone();
        f.w2 = Matrix::new(d, h, p.to_vec()).unwrap();
        loss(&f, &x)
    })?);
    worst = worst.max(gradient_error(&g.b2, &ffn.b2, |p| {
        let mut f = ffn.clone();
        f.b2 = p.to_vec();
        loss(&f, &x)
    })?);
    Ok(worst)
}

/// Same for the fusion MLP with GELU, over the patch features and all four
/// parameters.
pub fn fusion_gradient_error(seed: u64) -> Result<f64, KernelError> {
    let mut r = rng(seed);
    let n = 4 * r.gen_range(1..3);
    let d = r.gen_range(1..4);
    let h = r.gen_range(1..6);
    let m = r.gen_range(1..4);
    let features = random_matrix(&mut r, n, d);
    let mlp = FusionMlp::new(
        random_matrix(&mut r, 4 * d, h),
        uniform(&mut r, h),
        random_matrix(&mut r, h, m),
        uniform(&mut r, m),
        Activation::Gelu,
    )?;
    let upstream = random_matrix(&mut r, n / 4, m);
    let g = mlp.backward(&features, &upstream)?;
    let loss = |f: &FusionMlp, feats: &Matrix| dot(f.forward(feats).unwrap().data(), upstream.data());

    let mut worst = gradient_error(g.features.data(), features.data(), |p| {
        loss(&mlp, &Matrix::new(n, d, p.to_vec()).unwrap())
    })?;
    worst = worst.max(gradient_error(g.w1.data(), mlp.w1.data(), |p| {
        let mut f = mlp.clone();
        f.w1 = Matrix::new(4 * d, h, p.to_vec()).unwrap();
        loss(&f, &features)
    })?);
    worst = worst.max(gradient_error(&g.b1, &mlp.b1, |p| {
        let mut f = mlp.clone();
        f.b1 = p.to_vec();
        loss(&f, &features)
    })?);
    worst = worst.max(gradient_error(g.w2.data(), mlp.w2.data(), |p| {
        let mut f = mlp.clone();
        f.w2 = Matrix::new(h, m, p.to_vec()).unwrap();
        loss(&f, &features)
    })?);
    worst = worst.max(gradient_error(&g.b2, &mlp.b2, |p| {
        let mut f = mlp.clone();
        f.b2 = p.to_vec();
        loss(&f, &features)
    })?);
    Ok(worst)
}

/// Singular values of `m`, largest first.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let dm = DMatrix::from_row_slice(m.rows(), m.cols(), m.data());
    let mut sv: Vec<f64> = dm.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Number of singular values above `threshold`.
pub fn numerical_rank(m: &Matrix, threshold: f64) -> usize {
    singular_values(m).into_iter().filter(|s| *s > threshold).count()
}

/// A random adapter with both factors dense, so the rank bound is tight.
pub fn random_adapter(seed: u64, d: usize, r: usize) -> Result<LoraAdapter, KernelError> {
    let mut g = rng(seed);
    let target = [LoraTarget::Q, LoraTarget::K, LoraTarget::V, LoraTarget::O][g.gen_range(0..4)];
    LoraAdapter::new(random_matrix(&mut g, d, r), random_matrix(&mut g, r, d), target)
}

fn summarize(name: &str, errors: Result<Vec<f64>, KernelError>, tol: f64) -> CheckResult {
    match errors {
        Ok(errs) => {
            let worst = errs.iter().copied().fold(0.0, f64::max);
            CheckResult {
                name: name.into(),
                passed: worst <= tol,
                detail: format!("{} instances, max rel err {worst:.2e} (tol {tol:.0e})", errs.len()),
            }
        }
        Err(e) => CheckResult {
            name: name.into(),
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn check(name: &str, passed: bool, detail: impl Into<String>) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// Runs every kernel invariant with randomness derived from `seed`.
pub fn run_selftest(seed: u64) -> SelftestReport {
    let mut checks = Vec::new();

    // rmsnorm
    let unit = RmsNormParams::unit(1, 0.0);
    let ones = rmsnorm(&[1.0; 4], &unit);
    checks.push(check(
        "rmsnorm ones",
        ones.as_deref() == Ok(&[1.0; 4][..]),
        format!("{ones:?}"),
    ));
    let zeros = rmsnorm(&[0.0, 0.0], &RmsNormParams::unit(1, 1e-6));
    checks.push(check(
        "rmsnorm zeros",
        zeros.as_deref() == Ok(&[0.0, 0.0][..]),
        format!("{zeros:?}"),
    ));
    let three_four = rmsnorm(&[3.0, 4.0], &unit).unwrap_or_default();
    checks.push(check(
        "rmsnorm (3,4)",
        close(&three_four, &[0.848528, 1.131371], 1e-6),
        format!("{three_four:?}"),
    ));
    checks.push(check("rmsnorm empty input", rmsnorm(&[], &unit).is_err(), "rejected"));

    let mut r = rng(seed);
    let mut exact = true;
    let mut monotone = true;
    for _ in 0..20 {
        let n = r.gen_range(1..16);
        let x = uniform(&mut r, n);
        let base = rmsnorm(&x, &unit).unwrap();
        for alpha in [0.25, 0.5, 2.0, 8.0, 1024.0] {
            let scaled: Vec<f64> = x.iter().map(|v| v * alpha).collect();
            exact &= rmsnorm(&scaled, &unit).unwrap() == base;
        }
        let eps = RmsNormParams::unit(1, 1e-6);
        let mut last = f64::INFINITY;
        for alpha in [1e-3, 1e-2, 1e-1, 1.0] {
            let scaled: Vec<f64> = x.iter().map(|v| v * alpha).collect();
            let gap = max_abs_diff(&rmsnorm(&scaled, &eps).unwrap(), &base);
            monotone &= gap <= last;
            last = gap;
        }
    }
    checks.push(check(
        "rmsnorm scale invariance (eps=0)",
        exact,
        "20 vectors, power-of-two scales, bitwise",
    ));
    checks.push(check(
        "rmsnorm eps>0 approaches limit",
        monotone,
        "gap shrinks as scale grows",
    ));

    // swiglu
    let one = Matrix::identity(1);
    let s1 = swiglu_ffn(&[1.0], &one, &[0.0], &one, &[0.0], 1.0).unwrap_or_default();
    checks.push(check(
        "swiglu x=1",
        close(&s1, &[0.7310585786300049], 1e-15),
        format!("{s1:?}"),
    ));
    let s10 = swiglu_ffn(&[10.0], &one, &[0.0], &one, &[0.0], 1.0).unwrap_or_default();
    checks.push(check(
        "swiglu x=10",
        close(&s10, &[99.99546021312976], 1e-10),
        format!("{s10:?}"),
    ));
    let z = swiglu_ffn(
        &[0.0; 3],
        &Matrix::zeros(3, 2),
        &[0.0; 2],
        &Matrix::zeros(3, 2),
        &[0.0; 2],
        1.0,
    );
    checks.push(check(
        "swiglu zero input",
        z.as_deref() == Ok(&[0.0, 0.0][..]),
        format!("{z:?}"),
    ));

    // fusion
    let patches = Matrix::new(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let identity = FusionMlp::new(
        Matrix::identity(4),
        vec![0.0; 4],
        Matrix::identity(4),
        vec![0.0; 4],
        Activation::Relu,
    )
    .and_then(|m| m.forward(&patches));
    checks.push(check(
        "fusion relu identity",
        identity
            .as_ref()
            .map(|m| m.data() == [1.0, 2.0, 3.0, 4.0])
            .unwrap_or(false),
        format!("{:?}", identity.map(|m| m.to_rows())),
    ));
    let bad = FusionMlp::new(
        Matrix::identity(4),
        vec![0.0; 4],
        Matrix::identity(4),
        vec![0.0; 4],
        Activation::Gelu,
    )
    .and_then(|m| m.forward(&Matrix::zeros(3, 1)));
    checks.push(check("fusion ungroupable rows", bad.is_err(), "3 patches rejected"));

    // rope
    let mut iso = 0.0f64;
    let mut rel = 0.0f64;
    for _ in 0..100 {
        let n = 4 * r.gen_range(1..9);
        let q = uniform(&mut r, n);
        let k = uniform(&mut r, n);
        let (ph, pw) = (r.gen_range(-64..64), r.gen_range(-64..64));
        let (kh, kw) = (r.gen_range(-64..64), r.gen_range(-64..64));
        let (oh, ow) = (r.gen_range(-64..64), r.gen_range(-64..64));
        let rq = rope_2d(&q, ph, pw, DEFAULT_ROPE_BASE).unwrap();
        let rk = rope_2d(&k, kh, kw, DEFAULT_ROPE_BASE).unwrap();
        iso = iso.max((norm(&rq) - norm(&q)).abs());
        let shifted = dot(
            &rope_2d(&q, ph + oh, pw + ow, DEFAULT_ROPE_BASE).unwrap(),
            &rope_2d(&k, kh + oh, kw + ow, DEFAULT_ROPE_BASE).unwrap(),
        );
        rel = rel.max((dot(&rq, &rk) - shifted).abs());
    }
    checks.push(check(
        "rope isometry",
        iso <= 1e-12,
        format!("100 cases, max |Δnorm| {iso:.2e}"),
    ));
    checks.push(check(
        "rope relative position",
        rel <= 1e-10,
        format!("100 cases, max |Δdot| {rel:.2e}"),
    ));
    let first = rope_2d(&[1.0, 0.0, 1.0, 0.0], 1, 0, DEFAULT_ROPE_BASE).unwrap_or_default();
    checks.push(check(
        "rope (1,0,1,0) at (1,0)",
        close(&first, &[1f64.cos(), 1f64.sin(), 1.0, 0.0], 1e-15),
        format!("{first:?}"),
    ));

    // lora
    let mut rank_ok = true;
    let mut frozen = true;
    let mut worst_tail = 0.0f64;
    for i in 0..100u64 {
        let d = r.gen_range(2..13);
        let rank = r.gen_range(1..d);
        let adapter = random_adapter(seed.wrapping_add(i), d, rank).unwrap();
        let sv = singular_values(&lora_delta(&adapter));
        let tail = sv[rank..].iter().copied().fold(0.0, f64::max);
        worst_tail = worst_tail.max(tail);
        rank_ok &= tail < SINGULAR_VALUE_THRESHOLD;
        let w0 = random_matrix(&mut r, d, d);
        let before = w0.clone();
        let _ = lora_apply(&w0, &adapter);
        frozen &= w0 == before;
    }
    checks.push(check(
        "lora rank bound",
        rank_ok,
        format!("100 adapters, max tail singular value {worst_tail:.2e}"),
    ));
    checks.push(check("lora base weight untouched", frozen, "100 applications"));
    let counts = lora_param_count(64, 4);
    checks.push(check(
        "lora param count (64,4)",
        counts == Ok((512, 4096)),
        format!("{counts:?}"),
    ));
    checks.push(check(
        "lora rank must be below d",
        lora_param_count(4, 4).is_err(),
        "r = d rejected",
    ));

    // gradients
    let seeds =
        |offset: u64| (0..GRADIENT_INSTANCES as u64).map(move |i| seed.wrapping_mul(31).wrapping_add(offset + i));
    checks.push(summarize(
        "rmsnorm gradient",
        seeds(0).map(rmsnorm_gradient_error).collect(),
        GRADIENT_TOLERANCE,
    ));
    checks.push(summarize(
        "swiglu gradient",
        seeds(1000).map(swiglu_gradient_error).collect(),
        GRADIENT_TOLERANCE,
    ));
    checks.push(summarize(
        "fusion gradient",
        seeds(2000).map(fusion_gradient_error).collect(),
        GRADIENT_TOLERANCE,
    ));

    // sgd
    let mut theta = vec![1.0, 1.0];
    for _ in 0..100 {
        let grad: Vec<f64> = theta.iter().map(|t| 2.0 * t).collect();
        theta = sgd_step(&theta, &grad, 0.1).unwrap();
    }
    checks.push(check(
        "sgd on squared norm",
        norm(&theta) < 1e-8,
        format!("|θ| = {:.2e} after 100 steps", norm(&theta)),
    ));
    let step = sgd_step(&[1.0, 2.0], &[10.0, -10.0], 1e-5).unwrap_or_default();
    checks.push(check(
        "sgd step example",
        close(&step, &[0.9999, 2.0001], 1e-15),
        format!("{step:?}"),
    ));

    SelftestReport { checks }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let report = run_selftest(7);
        assert!(report.all_passed(), "{report}");
    }

    #[test]
    fn rank_oracle_sees_full_rank() {
        assert_eq!(numerical_rank(&Matrix::identity(5), SINGULAR_VALUE_THRESHOLD), 5);
        assert_eq!(numerical_rank(&Matrix::zeros(3, 3), SINGULAR_VALUE_THRESHOLD), 0);
    }
}
