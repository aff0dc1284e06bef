//! Block-fading MIMO channels and composite-channel similarity.
//!
//! `H[t][k]` is the `Nt x Nt` matrix seen by receiver `k` when user `t`
//! transmits; the received signal is `H[t][k]^H x`. Links are reciprocal:
//! `H[t][k] = H[k][t]^T`.

use nalgebra::{Complex, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WeicError};
use crate::model::SystemConfig;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
/// Row-major `[re, im]` form of a matrix.
pub type WireMatrix = Vec<Vec<[f64; 2]>>;

/// RNG stream reserved for channel draws, so that a shared seed does not
/// correlate channels with the cache/demand draw.
const CHANNEL_STREAM: u64 = 1;

/// Per-episode link matrices for every ordered sender/receiver pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    k: usize,
    nt: usize,
    links: Vec<Option<CMatrix>>,
    reciprocal: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelOptions {
    /// Draw every sender row independently instead of one reciprocal link
    /// matrix per episode.
    #[serde(default)]
    pub refresh_per_round: bool,
}

fn cn01(rng: &mut ChaCha8Rng) -> C64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re * s, im * s)
}

fn draw_matrix(rng: &mut ChaCha8Rng, nt: usize) -> CMatrix {
    // row-major fill so the draw order matches the wire layout
    let mut m = CMatrix::zeros(nt, nt);
    for r in 0..nt {
        for c in 0..nt {
            m[(r, c)] = cn01(rng);
        }
    }
    m
}

/// Samples i.i.d. CN(0, 1) link matrices with reciprocity `H[t][k] = H[k][t]^T`.
pub fn sample_channels(seed: u64, config: &SystemConfig) -> ChannelSet {
    sample_channels_with(seed, config, ChannelOptions::default())
}

pub fn sample_channels_with(seed: u64, config: &SystemConfig, opts: ChannelOptions) -> ChannelSet {
    let (k, nt) = (config.k, config.nt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(CHANNEL_STREAM);
    let mut links = vec![None; k * k];
    if opts.refresh_per_round {
        for t in 0..k {
            for r in (0..k).filter(|&r| r != t) {
                links[t * k + r] = Some(draw_matrix(&mut rng, nt));
            }
        }
    } else {
        for t in 0..k {
            for r in t + 1..k {
                let h = draw_matrix(&mut rng, nt);
                links[r * k + t] = Some(h.transpose());
                links[t * k + r] = Some(h);
            }
        }
    }
    ChannelSet {
        k,
        nt,
        links,
        reciprocal: !opts.refresh_per_round,
    }
}

impl ChannelSet {
    /// Builds a channel set from explicit link matrices, `links[t][k]`.
    /// Diagonal entries are ignored.
    pub fn from_links(links: Vec<Vec<CMatrix>>) -> Result<Self> {
        let k = links.len();
        let nt = links
            .iter()
            .enumerate()
            .flat_map(|(t, row)| row.iter().enumerate().filter(move |(r, _)| *r != t))
            .map(|(_, m)| m.nrows())
            .next()
            .unwrap_or(0);
        let mut flat = vec![None; k * k];
        for (t, row) in links.into_iter().enumerate() {
            if row.len() != k {
                return Err(WeicError::InvalidConfig(format!("channel row {t} has {} entries", row.len())));
            }
            for (r, m) in row.into_iter().enumerate() {
                if r == t {
                    continue;
                }
                if m.nrows() != nt || m.ncols() != nt {
                    return Err(WeicError::InvalidConfig(format!("link ({t},{r}) is not {nt}x{nt}")));
                }
                if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(WeicError::InvalidConfig(format!("link ({t},{r}) has non-finite entries")));
                }
                flat[t * k + r] = Some(m);
            }
        }
        let mut set = ChannelSet {
            k,
            nt,
            links: flat,
            reciprocal: false,
        };
        set.reciprocal = set.reciprocity_error() == 0.0;
        Ok(set)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn is_reciprocal(&self) -> bool {
        self.reciprocal
    }

    /// Link from `sender` to `receiver`.
    ///
    /// # Panics
    /// On `sender == receiver` (no self-link in half-duplex operation).
    pub fn link(&self, sender: usize, receiver: usize) -> &CMatrix {
        self.links[sender * self.k + receiver]
            .as_ref()
            .unwrap_or_else(|| panic!("no link from {sender} to {receiver}"))
    }

    pub fn try_link(&self, sender: usize, receiver: usize) -> Option<&CMatrix> {
        self.links.get(sender * self.k + receiver)?.as_ref()
    }

    /// The links a sender observes locally, `(receiver, H[sender][receiver])`.
    pub fn sender_row(&self, sender: usize) -> impl Iterator<Item = (usize, &CMatrix)> {
        (0..self.k)
            .filter(move |&r| r != sender)
            .map(move |r| (r, self.link(sender, r)))
    }

    /// Largest Frobenius norm of `H[t][k] - H[k][t]^T` over all pairs.
    pub fn reciprocity_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for t in 0..self.k {
            for r in t + 1..self.k {
                if let (Some(a), Some(b)) = (self.try_link(t, r), self.try_link(r, t)) {
                    worst = worst.max((a - b.transpose()).norm());
                }
            }
        }
        worst
    }
}

/// Matrix of `[re, im]` pairs, row-major.
pub fn matrix_to_wire(m: &CMatrix) -> WireMatrix {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
        .collect()
}

pub fn matrix_from_wire(rows: &[Vec<[f64; 2]>]) -> Result<CMatrix> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(WeicError::InvalidConfig("ragged matrix".into()));
    }
    Ok(CMatrix::from_fn(nr, nc, |r, c| C64::new(rows[r][c][0], rows[r][c][1])))
}

impl Serialize for ChannelSet {
    /// Nested `[t][k][row][col]` of `[re, im]`; self-links are `null`.
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut outer = s.serialize_seq(Some(self.k))?;
        for t in 0..self.k {
            let row: Vec<Option<WireMatrix>> = (0..self.k)
                .map(|r| self.try_link(t, r).map(matrix_to_wire))
                .collect();
            outer.serialize_element(&row)?;
        }
        outer.end()
    }
}

impl<'de> Deserialize<'de> for ChannelSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw: Vec<Vec<Option<WireMatrix>>> = Vec::deserialize(d)?;
        let k = raw.len();
        let mut links = Vec::with_capacity(k);
        for (t, row) in raw.iter().enumerate() {
            let mut out = Vec::with_capacity(row.len());
            for (r, m) in row.iter().enumerate() {
                match m {
                    Some(m) => out.push(matrix_from_wire(m).map_err(serde::de::Error::custom)?),
                    None if r == t => out.push(CMatrix::zeros(0, 0)),
                    None => return Err(serde::de::Error::custom(format!("missing link ({t},{r})"))),
                }
            }
            links.push(out);
        }
        ChannelSet::from_links(links).map_err(serde::de::Error::custom)
    }
}

/// Trace-normalized average Gram matrix of a destination set.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeChannel(pub CMatrix);

/// `S = (1/|D|) sum_k H^H H / tr(H^H H)` over `H = H[sender][k]`, `k` in `dests`.
pub fn composite_channel(channels: &ChannelSet, sender: usize, dests: &[usize]) -> Result<CompositeChannel> {
    if dests.is_empty() {
        return Err(WeicError::EmptyDestinationSet);
    }
    if dests.contains(&sender) {
        return Err(WeicError::InvalidAction(format!("sender {sender} cannot be its own destination")));
    }
    let nt = channels.nt();
    let mut s = CMatrix::zeros(nt, nt);
    for &k in dests {
        let h = channels.link(sender, k);
        let gram = h.adjoint() * h;
        let tr = gram.trace().re;
        if tr <= 0.0 {
            return Err(WeicError::ZeroChannel);
        }
        s += gram.unscale(tr);
    }
    Ok(CompositeChannel(s.unscale(dests.len() as f64)))
}

/// Cosine similarity under the real Frobenius inner product.
pub fn composite_similarity(a: &CompositeChannel, b: &CompositeChannel) -> Result<f64> {
    let (na, nb) = (a.0.norm(), b.0.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(WeicError::ZeroNorm);
    }
    let inner: f64 = a.0.iter().zip(b.0.iter()).map(|(x, y)| (x.conj() * y).re).sum();
    Ok((inner / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: usize, nt: usize) -> SystemConfig {
        SystemConfig {
            k,
            n: k.max(2),
            nt,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn sampling_is_deterministic_and_reciprocal() {
        let a = sample_channels(9, &cfg(4, 3));
        let b = sample_channels(9, &cfg(4, 3));
        assert_eq!(a, b);
        assert_eq!(a.reciprocity_error(), 0.0);
        assert_eq!(a.link(0, 1), &a.link(1, 0).transpose());
        assert!(a.try_link(2, 2).is_none());
    }

    #[test]
    fn per_round_refresh_breaks_reciprocity() {
        let c = sample_channels_with(9, &cfg(3, 2), ChannelOptions { refresh_per_round: true });
        assert!(!c.is_reciprocal());
        assert!(c.reciprocity_error() > 0.0);
    }

    #[test]
    fn entries_have_unit_variance() {
        // 10^4 entries per check: K = 2 gives one independent 1x1 link per draw
        let config = cfg(2, 1);
        let draws = 10_000;
        let mean: f64 = (0..draws)
            .map(|seed| sample_channels(seed, &config).link(0, 1)[(0, 0)].norm_sqr())
            .sum::<f64>()
            / draws as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean |h|^2 = {mean}");
    }

    #[test]
    fn composite_of_identity_is_scaled_identity() {
        let nt = 3;
        let eye = CMatrix::identity(nt, nt);
        let ch = ChannelSet::from_links(vec![
            vec![CMatrix::zeros(0, 0), eye.clone()],
            vec![eye.clone(), CMatrix::zeros(0, 0)],
        ])
        .unwrap();
        let s = composite_channel(&ch, 0, &[1]).unwrap();
        assert!((s.0 - eye.unscale(nt as f64)).norm() < 1e-15);
    }

    #[test]
    fn composite_is_hermitian_unit_trace() {
        let ch = sample_channels(4, &cfg(4, 3));
        for dests in [&[1usize][..], &[1, 2], &[1, 2, 3]] {
            let s = composite_channel(&ch, 0, dests).unwrap();
            assert!((s.0.trace().re - 1.0).abs() < 1e-12);
            assert!(s.0.trace().im.abs() < 1e-12);
            assert!((&s.0 - s.0.adjoint()).norm() < 1e-12);
        }
    }

    #[test]
    fn composite_two_destinations_matches_direct_average() {
        let ch = sample_channels(5, &cfg(3, 2));
        let s = composite_channel(&ch, 2, &[0, 1]).unwrap();
        // direct entrywise evaluation
        for r in 0..2 {
            for c in 0..2 {
                let mut acc = C64::new(0.0, 0.0);
                for k in [0, 1] {
                    let h = ch.link(2, k);
                    let gram_rc: C64 = (0..2).map(|i| h[(i, r)].conj() * h[(i, c)]).sum();
                    let tr: f64 = h.iter().map(|z| z.norm_sqr()).sum();
                    acc += gram_rc / tr;
                }
                acc /= 2.0;
                assert!((acc - s.0[(r, c)]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn empty_destination_set_is_rejected() {
        let ch = sample_channels(1, &cfg(3, 2));
        assert_eq!(composite_channel(&ch, 0, &[]).unwrap_err(), WeicError::EmptyDestinationSet);
    }

    #[test]
    fn similarity_closed_forms() {
        let nt = 4;
        let iso = CompositeChannel(CMatrix::identity(nt, nt).unscale(nt as f64));
        let mut e1 = CMatrix::zeros(nt, nt);
        e1[(0, 0)] = C64::new(1.0, 0.0);
        let e1 = CompositeChannel(e1);
        assert!((composite_similarity(&iso, &iso).unwrap() - 1.0).abs() < 1e-15);
        let c = composite_similarity(&iso, &e1).unwrap();
        assert!((c - 1.0 / (nt as f64).sqrt()).abs() < 1e-15);
        let zero = CompositeChannel(CMatrix::zeros(nt, nt));
        assert_eq!(composite_similarity(&iso, &zero).unwrap_err(), WeicError::ZeroNorm);
    }

    #[test]
    fn similarity_is_symmetric_bounded_nonnegative() {
        let ch = sample_channels(11, &cfg(5, 3));
        let sets: Vec<CompositeChannel> = [vec![1], vec![2, 3], vec![1, 4], vec![2, 3, 4]]
            .iter()
            .map(|d| composite_channel(&ch, 0, d).unwrap())
            .collect();
        for a in &sets {
            for b in &sets {
                let ab = composite_similarity(a, b).unwrap();
                let ba = composite_similarity(b, a).unwrap();
                assert!((ab - ba).abs() < 1e-15);
                assert!((0.0..=1.0).contains(&ab));
            }
        }
    }

    #[test]
    fn wire_roundtrip() {
        let ch = sample_channels(2, &cfg(3, 2));
        let json = serde_json::to_string(&ch).unwrap();
        assert!(json.starts_with("[[null,[[["));
        let back: ChannelSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ch);
    }
}
