//! Central finite-difference checks of the reverse pass.
//!
//! [`grad_check`] is the plain version: analytic gradient and difference
//! quotient both in `f64`. Its floor is the roundoff in `f(x±h)`, about
//! `ε·|f| / h ≈ 1e-11` absolute, so coordinates whose true gradient is much
//! below `1e-5` cannot reach a `1e-6` relative agreement whatever the backward
//! pass does. [`grad_check_dual`] keeps the analytic side in `f64` and
//! evaluates the difference quotient in double-double ([`Dd`]), which removes
//! that floor while leaving the step and the error measure unchanged.

use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::graph::{Graph, OpKind, Var};
use crate::tensor::{Real, Tensor};

/// Step used by the central difference.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Result of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |analytic − numeric| / max(1e-8, |analytic| + |numeric|)`.
    pub max_rel_error: f64,
    /// The same measure against an `f64` difference quotient. Equal to
    /// `max_rel_error` for [`grad_check`].
    pub plain_rel_error: f64,
    /// Input and flat coordinate where the maximum occurred.
    pub worst: (usize, usize),
    pub coords_checked: usize,
    /// See [`Graph::kink_margin`].
    pub kink_margin: Option<f64>,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// One scalar function recorded at both precisions. Build with [`dual!`],
/// which instantiates a single body twice.
///
/// [`dual!`]: crate::dual
pub struct Dual<P, W> {
    pub plain: P,
    pub wide: W,
}

/// `dual!(|g, v: &[Var]| -> Result<Var> { ... })` yields a [`Dual`] whose
/// `plain` closure takes `&mut Graph<f64>` and `wide` takes `&mut Graph<Dd>`.
/// Extra typed arguments after `g` are passed through unchanged.
#[macro_export]
macro_rules! dual {
    (|$g:ident $(, $a:ident : $t:ty)*| -> $r:ty { $($body:tt)* }) => {
        $crate::gradcheck::Dual {
            plain: |$g: &mut $crate::graph::Graph<f64> $(, $a: $t)*| -> $r { $($body)* },
            wide: |$g: &mut $crate::graph::Graph<$crate::dd::Dd> $(, $a: $t)*| -> $r { $($body)* },
        }
    };
}

/// Compares the analytic gradient of scalar `f` at `inputs` against central
/// differences. `f` receives one leaf per input and must be deterministic.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>]) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    grad_check_with(f, inputs, DEFAULT_STEP, None)
}

/// Like [`grad_check`] with an explicit step and optional fault injection
/// into the analytic pass.
pub fn grad_check_with<F>(
    f: F,
    inputs: &[Tensor<f64>],
    step: f64,
    fault: Option<OpKind>,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (analytic, kink_margin) = analytic_pass(&f, inputs, fault)?;
    let mut report = compare(&analytic, inputs, |which, idx| {
        difference(&f, inputs, which, idx, step)
    })?;
    report.plain_rel_error = report.max_rel_error;
    report.kink_margin = kink_margin;
    Ok(report)
}

/// Analytic gradient from `f.plain` in `f64`, difference quotient from
/// `f.wide` in double-double. Also reports the plain `f64` quotient's error.
pub fn grad_check_dual<P, W>(
    f: &Dual<P, W>,
    inputs: &[Tensor<f64>],
    step: f64,
    fault: Option<OpKind>,
) -> Result<GradCheck>
where
    P: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    W: Fn(&mut Graph<Dd>, &[Var]) -> Result<Var>,
{
    let (analytic, kink_margin) = analytic_pass(&f.plain, inputs, fault)?;
    let plain = compare(&analytic, inputs, |which, idx| {
        difference(&f.plain, inputs, which, idx, step)
    })?;
    let wide_inputs: Vec<Tensor<Dd>> = inputs.iter().map(Tensor::cast).collect();
    let mut report = compare(&analytic, inputs, |which, idx| {
        difference(&f.wide, &wide_inputs, which, idx, step)
    })?;
    report.plain_rel_error = plain.max_rel_error;
    report.kink_margin = kink_margin;
    Ok(report)
}

type Analytic = (Vec<Tensor<f64>>, Option<f64>);

fn analytic_pass<F>(f: &F, inputs: &[Tensor<f64>], fault: Option<OpKind>) -> Result<Analytic>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    if let Some(kind) = fault {
        g.inject_fault(kind);
    }
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let base = g.value(out).data()[0];
    if !base.is_finite() {
        return Err(Error::Numeric(format!("non-finite function value {base}")));
    }
    let margin = g.kink_margin();
    let grads = g.backward(out)?;
    let analytic = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();
    Ok((analytic, margin))
}

/// `(f(x + h·e) − f(x − h·e)) / 2h` for coordinate `idx` of input `which`,
/// computed in `T` and rounded to `f64`.
fn difference<T, F>(f: &F, inputs: &[Tensor<T>], which: usize, idx: usize, step: f64) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let eval = |delta: T| -> Result<T> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if i == which {
                    let mut t = t.clone();
                    t.data_mut()[idx] = t.data()[idx] + delta;
                    g.leaf(t)
                } else {
                    g.leaf(t.clone())
                }
            })
            .collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };
    let h = T::from_f64_lossy(step);
    let plus = eval(h)?;
    let minus = eval(-h)?;
    Ok(((plus - minus) / (h + h)).to_f64_lossy())
}

fn compare(
    analytic: &[Tensor<f64>],
    inputs: &[Tensor<f64>],
    mut numeric_at: impl FnMut(usize, usize) -> Result<f64>,
) -> Result<GradCheck> {
    let mut report = GradCheck {
        max_rel_error: 0.0,
        plain_rel_error: 0.0,
        worst: (0, 0),
        coords_checked: 0,
        kink_margin: None,
    };
    for (which, grad) in analytic.iter().enumerate() {
        for idx in 0..inputs[which].len() {
            let numeric = numeric_at(which, idx)?;
            let a = grad.data()[idx];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient at input {which}, coordinate {idx} (analytic {a}, numeric {numeric})"
                )));
            }
            let err = rel_error(a, numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (which, idx);
            }
            report.coords_checked += 1;
        }
    }
    Ok(report)
}
