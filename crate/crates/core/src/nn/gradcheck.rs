use super::{Graph, LabeledModel, Result};

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |g_ad - g_fd| / max(|g_ad|, |g_fd|, RELATIVE_FLOOR)` over all scalars.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub n_checked: usize,
}

fn loss_value(model: &LabeledModel, inputs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new(&model.store);
    let loss = model.loss(&mut g, inputs, labels)?;
    Ok(g.tape.scalar_value(loss))
}

/// Compares the tape gradient of the sequence cross-entropy with central
/// finite differences of step `step` on every scalar parameter.
pub fn gradient_check(model: &LabeledModel, inputs: &[Vec<f64>], labels: &[usize], step: f64) -> Result<GradCheckReport> {
    let mut g = Graph::new(&model.store);
    let loss = model.loss(&mut g, inputs, labels)?;
    g.tape.backward(loss)?;
    let analytic = g.param_grads();

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        n_checked: 0,
    };
    for id in model.store.ids() {
        let n = model.store.get(id).numel();
        for k in 0..n {
            let orig = model.store.get(id).data()[k];
            probe.store.get_mut(id).data_mut()[k] = orig + step;
            let up = loss_value(&probe, inputs, labels)?;
            probe.store.get_mut(id).data_mut()[k] = orig - step;
            let down = loss_value(&probe, inputs, labels)?;
            probe.store.get_mut(id).data_mut()[k] = orig;

            let fd = (up - down) / (2.0 * step);
            let ad = analytic[id.index()].as_ref().map_or(0.0, |g| g[k]);
            let err = (ad - fd).abs() / ad.abs().max(fd.abs()).max(RELATIVE_FLOOR);
            report.n_checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = model.store.name(id).to_string();
                report.worst_index = k;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_model, ArchitectureSpec, ModelKind};

    #[test]
    fn every_kind_and_arch_passes() {
        let inputs: Vec<Vec<f64>> = (0..5)
            .map(|t| (0..4).map(|d| ((t * 4 + d) as f64 * 0.37).sin()).collect())
            .collect();
        let labels = [0, 2, 1, 1, 0];
        for kind in ModelKind::ALL {
            for arch in 1..=3 {
                let model = build_model(&ArchitectureSpec::new(kind, arch, 3, 3, 4), 3).unwrap();
                let r = gradient_check(&model, &inputs, &labels, 1e-5).unwrap();
                assert!(r.max_rel_error < 1e-4, "{kind} arch {arch}: {r:?}");
                assert_eq!(r.n_checked, model.n_parameters());
            }
        }
    }
}
