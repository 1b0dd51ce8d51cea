//! Advantage post-processing: EMA scale normalization, the soft gate that
//! combines two advantage streams, and exponential advantage weights.

/// Tracks an exponential moving average of the second moment of a score
/// stream and rescales batches to roughly unit scale. No centering: the
/// sign of an advantage is meaningful and must survive normalization.
#[derive(Debug, Clone)]
pub struct EmaNorm {
    decay: f64,
    mean_sq: f64,
    initialized: bool,
}

impl EmaNorm {
    pub fn new(decay: f64) -> Self {
        assert!((0.0..1.0).contains(&decay), "decay must be in [0,1)");
        EmaNorm { decay, mean_sq: 0.0, initialized: false }
    }

    /// Fold a batch into the running moment, then return the normalized
    /// values `x / sqrt(ema_mean_sq + 1e-6)`.
    pub fn normalize(&mut self, values: &[f64]) -> Vec<f64> {
        if values.is_empty() {
            return Vec::new();
        }
        let batch_sq = values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64;
        if self.initialized {
            self.mean_sq = self.decay * self.mean_sq + (1.0 - self.decay) * batch_sq;
        } else {
            self.mean_sq = batch_sq;
            self.initialized = true;
        }
        let scale = 1.0 / (self.mean_sq + 1e-6).sqrt();
        values.iter().map(|v| v * scale).collect()
    }

    pub fn rms(&self) -> f64 {
        (self.mean_sq + 1e-6).sqrt()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Soft priority gate: the secondary advantage only contributes where the
/// primary one is already favorable.
///
/// `gate(p, s) = p + sigmoid(p) * s`; large positive `p` passes `s`
/// through, large negative `p` suppresses it.
pub fn gate(primary: f64, secondary: f64) -> f64 {
    primary + sigmoid(primary) * secondary
}

/// Exponential advantage weight `min(exp(beta * score), clip)`.
pub fn awr_weight(score: f64, beta: f64, clip: f64) -> f64 {
    (beta * score).exp().min(clip)
}
