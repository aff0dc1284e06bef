use super::{BeamformerSet, CVector};
use crate::channel::{ChannelSet, CMatrix, C64};
use crate::eic::RoundAction;
use crate::error::{Result, WeicError};

/// Unit eigenvector of `H H^H` for its largest eigenvalue, with that
/// eigenvalue (`sigma_max(H)^2`). The phase is fixed so that the largest
/// component is real and positive.
pub fn dominant_direction(h: &CMatrix) -> Result<(CVector, f64)> {
    if h.iter().all(|z| z.norm_sqr() == 0.0) {
        return Err(WeicError::ZeroChannel);
    }
    let gram = h * h.adjoint();
    let eig = gram.symmetric_eigen();
    let (best, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty spectrum");
    let mut u: CVector = eig.eigenvectors.column(best).into_owned();
    let norm = u.norm();
    u.unscale_mut(norm);
    let pivot = u
        .iter()
        .copied()
        .max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr()))
        .expect("nonempty vector");
    let phase = C64::new(pivot.re, -pivot.im) / pivot.norm();
    let u = u.map(|z| z * phase);
    Ok((u, lambda.max(0.0)))
}

/// Maximum-ratio transmission toward `H`: `sqrt(P)` times the dominant
/// right-singular direction of `H^H`.
pub fn mrt_beamformer(h: &CMatrix, power: f64) -> Result<CVector> {
    let (u, _) = dominant_direction(h)?;
    Ok(u.scale(power.sqrt()))
}

/// Per-message MRT toward the block member with the strongest channel, with
/// the budget split equally across messages.
pub fn mrt_equal_power(channels: &ChannelSet, sender: usize, action: &RoundAction, power: f64) -> Result<BeamformerSet> {
    if action.is_skip() {
        return Ok(BeamformerSet::empty());
    }
    let share = power / action.num_streams() as f64;
    let mut vectors = Vec::with_capacity(action.num_streams());
    for block in &action.blocks {
        let mut best: Option<(CVector, f64)> = None;
        for &k in block {
            let (u, lambda) = dominant_direction(channels.link(sender, k))?;
            if best.as_ref().is_none_or(|(_, l)| lambda > *l) {
                best = Some((u, lambda));
            }
        }
        let (u, _) = best.ok_or_else(|| WeicError::InvalidAction("empty block".into()))?;
        vectors.push(u.scale(share.sqrt()));
    }
    Ok(BeamformerSet::new(vectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamforming::beam_gain;
    use crate::channel::sample_channels;
    use crate::model::SystemConfig;

    #[test]
    fn identity_channel_reaches_full_power() {
        let h = CMatrix::identity(2, 2);
        let v = mrt_beamformer(&h, 2.5).unwrap();
        assert!((v.norm_squared() - 2.5).abs() < 1e-12);
        assert!((beam_gain(&h, &v) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn diagonal_channel_picks_strongest_axis() {
        let mut h = CMatrix::zeros(2, 2);
        h[(0, 0)] = C64::new(2.0, 0.0);
        h[(1, 1)] = C64::new(1.0, 0.0);
        let v = mrt_beamformer(&h, 1.0).unwrap();
        assert!((v[0] - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(v[1].norm() < 1e-12);
        assert!((beam_gain(&h, &v) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn matches_svd_on_random_channels() {
        let config = SystemConfig { k: 2, n: 2, nt: 4, ..SystemConfig::default() };
        for seed in 0..20 {
            let h = sample_channels(seed, &config).link(0, 1).clone();
            let sigma = h.clone().svd(false, false).singular_values.max();
            let p = 1.7;
            let v = mrt_beamformer(&h, p).unwrap();
            let gain = beam_gain(&h, &v);
            assert!((gain - p * sigma * sigma).abs() < 1e-9 * gain.max(1.0), "seed {seed}");
        }
    }

    #[test]
    fn zero_channel_is_an_error() {
        assert_eq!(mrt_beamformer(&CMatrix::zeros(3, 3), 1.0).unwrap_err(), WeicError::ZeroChannel);
    }
}
