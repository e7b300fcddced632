use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use super::graph::{Graph, Var};
use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Gradients smaller than this are compared on an absolute scale. Central
/// differences at step 1e-5 carry roundoff near `1e-16 * |loss| / 1e-5`, so
/// structurally zero gradients (e.g. attention key biases) need a floor.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct GroupCheck {
    pub group: String,
    pub n_checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub groups: Vec<GroupCheck>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares back-propagated gradients with central differences on up to
/// `per_group` randomly chosen scalars from each named parameter group.
pub fn check_gradients<F, R>(
    ps: &mut ParamStore,
    groups: &[(String, Vec<ParamId>)],
    per_group: usize,
    step: f64,
    rng: &mut R,
    loss_fn: F,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> (Graph, Var),
    R: Rng,
{
    let (g, loss) = loss_fn(ps);
    if !g.scalar(loss).is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    let mut grads = Gradients::zeros_like(ps);
    g.backward(loss, &mut grads);
    drop(g);

    let eval = |ps: &ParamStore| {
        let (g, l) = loss_fn(ps);
        g.scalar(l)
    };
    let mut report = GradCheckReport { max_rel_error: 0.0, groups: Vec::new() };
    for (name, ids) in groups {
        let sizes: Vec<usize> = ids.iter().map(|&id| ps.get(id).len()).collect();
        let total: usize = sizes.iter().sum();
        let n = per_group.min(total);
        let mut worst = 0.0f64;
        for flat in sample(rng, total, n) {
            let (mut k, mut off) = (0, flat);
            while off >= sizes[k] {
                off -= sizes[k];
                k += 1;
            }
            let id = ids[k];
            let cols = ps.get(id).ncols();
            let idx = [off / cols, off % cols];
            let orig = ps.get(id)[idx];
            ps.get_mut(id)[idx] = orig + step;
            let lp = eval(ps);
            ps.get_mut(id)[idx] = orig - step;
            let lm = eval(ps);
            ps.get_mut(id)[idx] = orig;
            let numeric = (lp - lm) / (2.0 * step);
            worst = worst.max(relative_error(grads.get(id)[idx], numeric));
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.groups.push(GroupCheck { group: name.clone(), n_checked: n, max_rel_error: worst });
    }
    Ok(report)
}
