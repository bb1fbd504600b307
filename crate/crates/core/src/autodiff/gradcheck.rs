use super::graph::{Graph, Var};
use super::tensor::Tensor;
use super::AutodiffError;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Denominator floor, so that near-zero gradients are compared in
    /// absolute terms.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(coordinate, analytic, numeric)` for every coordinate above tolerance.
    pub failures: Vec<(usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares `analytic` with central differences of `f` around `x`, over
/// `coords` (all coordinates when `None`).
pub fn compare_gradients(
    mut f: impl FnMut(&Tensor) -> f64,
    x: &Tensor,
    analytic: &Tensor,
    coords: Option<&[usize]>,
    opts: &GradCheckOptions,
) -> GradCheckReport {
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut report = GradCheckReport::default();
    let mut probe = x.clone();
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + opts.h;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - opts.h;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * opts.h);
        let a = analytic.data()[i];
        let err = relative_error(a, numeric, opts.floor);
        report.checked += 1;
        report.max_rel_error = report.max_rel_error.max(err);
        if !(err <= opts.tol) {
            report.failures.push((i, a, numeric));
        }
    }
    report
}

/// Checks the reverse-mode gradient of the scalar built by `f` from input
/// `x` against central differences.
pub fn grad_check(
    f: impl Fn(&mut Graph, Var) -> Result<Var, AutodiffError>,
    x: &Tensor,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, AutodiffError> {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let out = f(&mut g, xv)?;
    let grads = g.backward(out)?;
    let analytic = grads.get_or_zeros(xv, x);
    let eval = |t: &Tensor| {
        let mut g = Graph::new();
        let xv = g.leaf(t.clone());
        match f(&mut g, xv) {
            Ok(out) => g.value(out).to_scalar(),
            Err(_) => f64::NAN,
        }
    };
    Ok(compare_gradients(eval, x, &analytic, None, opts))
}
