use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;

pub fn relu_forward<S: Scalar>(x: &[S], out: &mut Vec<S>) {
    out.clear();
    out.extend(x.iter().map(|&v| v.max_s(S::ZERO)));
}

/// dL/dx for y = max(x, 0); subgradient 0 at the kink.
pub fn relu_backward<S: Scalar>(x: &[S], dout: &[S], dx: &mut Vec<S>) {
    debug_assert_eq!(x.len(), dout.len());
    dx.clear();
    dx.extend(
        x.iter()
            .zip(dout)
            .map(|(&v, &d)| if v > S::ZERO { d } else { S::ZERO }),
    );
}

/// Fuzzy tiling activation: bins each scalar into `k` bins of width `eta`
/// over [-eta*k/2, eta*k/2], producing a one-hot bin indicator plus at most
/// one fuzzy entry in (0, 1) for the neighboring lower bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FtaConfig {
    pub k: usize,
    pub eta: f64,
}

impl Default for FtaConfig {
    fn default() -> Self {
        FtaConfig { k: 20, eta: 0.2 }
    }
}

impl FtaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::config("FTA bin count k must be >= 1"));
        }
        if !(self.eta > 0.0) {
            return Err(Error::config("FTA eta must be positive"));
        }
        Ok(())
    }

    #[inline]
    pub fn low(&self) -> f64 {
        -self.eta * (self.k as f64 / 2.0)
    }

    #[inline]
    pub fn high(&self) -> f64 {
        self.eta * (self.k as f64 / 2.0)
    }

    /// Lower edge of bin `m` (0-based): eta * (m - k/2).
    #[inline]
    pub fn edge(&self, m: usize) -> f64 {
        self.eta * (m as f64 - self.k as f64 / 2.0)
    }

    /// Bin index for a (clipped) input. Boundary values belong to the
    /// higher-index bin; the top boundary stays in the last bin.
    #[inline]
    pub fn bin(&self, zc: f64) -> usize {
        let k = self.k;
        let mut i = ((zc - self.low()) / self.eta).floor();
        if i < 0.0 {
            i = 0.0;
        }
        let mut i = (i as usize).min(k - 1);
        while i + 1 < k && zc >= self.edge(i + 1) {
            i += 1;
        }
        while i >= 1 && zc < self.edge(i) {
            i -= 1;
        }
        i
    }
}

/// Expands each scalar of `z` into `k` entries. Inputs are clipped to the
/// binning range first; bin membership and fuzzy values are computed in f64
/// so f32 and f64 instantiations bin identically.
pub fn fta_forward<S: Scalar>(z: &[S], cfg: &FtaConfig, out: &mut Vec<S>) {
    let k = cfg.k;
    out.clear();
    out.resize(z.len() * k, S::ZERO);
    let (lo, hi) = (cfg.low(), cfg.high());
    for (j, &zj) in z.iter().enumerate() {
        let zc = zj.to_f64().clamp(lo, hi);
        let i = cfg.bin(zc);
        let base = j * k;
        out[base + i] = S::ONE;
        if i >= 1 {
            let t = zc - cfg.edge(i);
            if t < cfg.eta {
                out[base + i - 1] = S::from_f64(1.0 - t);
            }
        }
    }
}

/// dL/dz for the FTA expansion. The one-hot entry is locally constant; the
/// fuzzy entry has slope -1 in the raw input. Right-hand derivatives at bin
/// boundaries; zero gradient outside the (open) clipping range.
pub fn fta_backward<S: Scalar>(z: &[S], cfg: &FtaConfig, dout: &[S], dz: &mut Vec<S>) {
    let k = cfg.k;
    debug_assert_eq!(dout.len(), z.len() * k);
    dz.clear();
    dz.resize(z.len(), S::ZERO);
    let (lo, hi) = (cfg.low(), cfg.high());
    for (j, &zj) in z.iter().enumerate() {
        let zraw = zj.to_f64();
        if zraw <= lo || zraw >= hi {
            continue; // clipped region: zero gradient
        }
        let i = cfg.bin(zraw);
        if i >= 1 {
            let t = zraw - cfg.edge(i);
            if t < cfg.eta {
                dz[j] = -dout[j * k + i - 1];
            }
        }
    }
}
