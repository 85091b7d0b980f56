use super::{Network, NnError};

pub const GRAD_CHECK_STEP: f64 = 1e-5;
const DENOM_FLOOR: f64 = 1e-8;

/// Maximum over all parameters of
/// `|g_bp − g_fd| / max(|g_bp|, |g_fd|, 1e-8)`, where `g_fd` is the central
/// difference with step [`GRAD_CHECK_STEP`].
pub fn grad_check<N: Network>(net: &N, x: &N::Input, target: usize) -> Result<f64, NnError> {
    let mut backprop = vec![0.0; net.params().len()];
    net.backprop(x, target, &mut backprop)?;

    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (i, g_bp) in backprop.iter().enumerate() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + GRAD_CHECK_STEP;
        let plus = probe.loss(x, target)?;
        probe.params_mut()[i] = orig - GRAD_CHECK_STEP;
        let minus = probe.loss(x, target)?;
        probe.params_mut()[i] = orig;

        let g_fd = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
        let denom = g_bp.abs().max(g_fd.abs()).max(DENOM_FLOOR);
        worst = worst.max((g_bp - g_fd).abs() / denom);
    }
    Ok(worst)
}
