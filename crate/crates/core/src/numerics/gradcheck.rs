use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::{Graph, ParamStore, Var};
use crate::Result;

/// Denominator floor for the relative error, so gradients that are zero on
/// both sides compare as equal.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub n_checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub groups: Vec<GroupReport>,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub step: f64,
}

impl GradcheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.groups {
            writeln!(
                f,
                "{:<28} n={:<6} max_rel_err={:.3e} max_abs_err={:.3e}",
                g.name, g.n_checked, g.max_rel_err, g.max_abs_err
            )?;
        }
        write!(
            f,
            "overall max_rel_err={:.3e} worst={} (h={:e})",
            self.max_rel_err, self.worst_param, self.step
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares `backward` against central differences `(f(θ+h) - f(θ-h)) / 2h`
/// for every element of every trainable parameter. `build` must construct
/// the scalar loss from the store alone.
pub fn gradcheck<F>(store: &mut ParamStore, h: f64, build: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.zero_grads();
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    g.backward(loss, store)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let l = build(&mut g, s)?;
        g.value(l).item()
    };

    let ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, _)| id)
        .collect();
    let mut groups = Vec::new();
    let mut worst = (0.0f64, String::new());
    for id in ids {
        let analytic = store
            .get(id)
            .grad
            .clone()
            .unwrap_or_else(|| {
                let v = &store.get(id).value;
                super::Tensor::zeros(v.rows(), v.cols())
            });
        let n = analytic.len();
        let mut report = GroupReport {
            name: store.get(id).name.clone(),
            n_checked: n,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
        };
        for i in 0..n {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + h;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig - h;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[i];
            report.max_rel_err = report.max_rel_err.max(relative_error(a, numeric));
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
        }
        if report.max_rel_err >= worst.0 {
            worst = (report.max_rel_err, report.name.clone());
        }
        groups.push(report);
    }
    store.zero_grads();
    Ok(GradcheckReport {
        groups,
        max_rel_err: worst.0,
        worst_param: worst.1,
        step: h,
    })
}
