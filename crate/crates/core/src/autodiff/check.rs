use super::{AutodiffError, Graph, NodeId, Tensor};

/// Compare backprop gradients against central finite differences.
///
/// `build` appends a computation to the graph, mapping the leaf holding `x`
/// to a scalar loss node. The function is evaluated at f32 precision but the
/// difference quotient uses the *actual* step between the two perturbed f32
/// values, computed in f64, so the check stays meaningful near the limits of
/// f32 resolution.
///
/// Returns the maximum over coordinates of
/// `|g_backprop - g_fd| / max(|g_fd|, 1e-8)`.
pub fn finite_diff_check<F>(build: F, x: &Tensor, eps: f32) -> Result<f32, AutodiffError>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId, AutodiffError>,
{
    if !(1e-5..=1e-2).contains(&eps) {
        return Err(AutodiffError::InvalidEps { eps });
    }

    let eval = |data: &[f32]| -> Result<f32, AutodiffError> {
        let mut g = Graph::new();
        let leaf = g.leaf(Tensor::new(x.shape().to_vec(), data.to_vec())?);
        let loss = build(&mut g, leaf)?;
        let v = g.value(loss);
        if !v.is_scalar() {
            return Err(AutodiffError::NonScalarLoss { shape: v.shape().to_vec() });
        }
        Ok(v.item())
    };

    // Analytic gradient. A loss that ignores x yields no gradient entry;
    // treat that as an exact zero gradient.
    let analytic = {
        let mut g = Graph::new();
        let leaf = g.leaf(x.clone());
        let loss = build(&mut g, leaf)?;
        let grads = g.backprop(loss)?;
        match grads.get(leaf) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; x.numel()],
        }
    };

    let mut worst = 0.0f32;
    let mut probe = x.data().to_vec();
    for i in 0..probe.len() {
        let orig = probe[i];
        let hi = orig + eps;
        let lo = orig - eps;
        probe[i] = hi;
        let f_hi = eval(&probe)? as f64;
        probe[i] = lo;
        let f_lo = eval(&probe)? as f64;
        probe[i] = orig;
        if !f_hi.is_finite() || !f_lo.is_finite() {
            return Err(AutodiffError::NonFinite { op: "finite-diff probe".into() });
        }
        // Step actually realized after f32 rounding.
        let h = hi as f64 - lo as f64;
        let fd = (f_hi - f_lo) / h;
        let rel = (analytic[i] as f64 - fd).abs() / fd.abs().max(1e-8);
        worst = worst.max(rel as f32);
    }
    Ok(worst)
}
