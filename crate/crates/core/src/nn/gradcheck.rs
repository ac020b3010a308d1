//! Central finite-difference verification of [`Graph::backward`].

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// Parameter entry with the largest error.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Denominator floor so that near-zero gradients are judged absolutely.
    pub floor: f64,
    /// Upper bound on checked entries; larger models are rejected.
    pub max_params: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            floor: 1e-6,
            max_params: 1000,
        }
    }
}

/// Compares reverse-mode gradients of the scalar built by `f` with central
/// differences over every trainable parameter entry.
pub fn check_gradients<F>(store: &ParamStore<f64>, cfg: GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let n = store.trainable_numel();
    if n > cfg.max_params {
        return Err(invalid!("{n} trainable entries exceed the gradient-check limit of {}", cfg.max_params));
    }
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(s);
        let out = f(&mut g)?;
        Ok(g.value(out).data()[0])
    };
    let grads = {
        let mut g = Graph::new(store);
        let out = f(&mut g)?;
        g.backward(out)?
    };
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        for i in 0..store.value(id).len() {
            let orig = store.value(id).data()[i];
            work.get_mut(id).value.data_mut()[i] = orig + cfg.step;
            let plus = eval(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig - cfg.step;
            let minus = eval(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(cfg.floor);
            report.checked += 1;
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst = Some((store.get(id).name.clone(), i));
            }
        }
    }
    Ok(report)
}
