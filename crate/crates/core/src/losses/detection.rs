use crate::perception::sigmoid;

pub const SMOOTH_L1_BETA: f64 = 1.0 / 9.0;

/// Smooth-L1 value and derivative.
pub fn smooth_l1(d: f64, beta: f64) -> (f64, f64) {
    if d.abs() < beta {
        (0.5 * d * d / beta, d / beta)
    } else {
        (d.abs() - 0.5 * beta, d.signum())
    }
}

/// Binary cross-entropy on a logit, with its derivative.
fn bce_with_logit(z: f64, target: bool) -> (f64, f64) {
    let y = if target { 1.0 } else { 0.0 };
    let value = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    (value, sigmoid(z) - y)
}

/// Inputs of the detection loss for one image.
#[derive(Debug, Clone, Copy, Default)]
pub struct DetInputs<'a> {
    /// Sampled anchors: `(objectness logit, is foreground)`.
    pub objectness: &'a [(f64, bool)],
    /// Foreground anchors: `(predicted deltas, target deltas)`.
    pub regression: &'a [([f64; 4], [f64; 4])],
    /// Proposals: `(score logit, is foreground)`.
    pub scores: &'a [(f64, bool)],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetLoss {
    pub value: f64,
    pub objectness: f64,
    pub regression: f64,
    pub score: f64,
    pub grad_objectness: Vec<f64>,
    pub grad_regression: Vec<[f64; 4]>,
    pub grad_scores: Vec<f64>,
}

/// RPN objectness cross-entropy plus smooth-L1 regression, both averaged
/// over the sampled anchors, plus the proposal score cross-entropy.
pub fn det_loss(inp: &DetInputs<'_>) -> DetLoss {
    let mut out = DetLoss::default();
    let ns = inp.objectness.len().max(1) as f64;
    for &(z, fg) in inp.objectness {
        let (v, g) = bce_with_logit(z, fg);
        out.objectness += v / ns;
        out.grad_objectness.push(g / ns);
    }
    for (pred, target) in inp.regression {
        let mut g = [0.0; 4];
        for j in 0..4 {
            let (v, d) = smooth_l1(pred[j] - target[j], SMOOTH_L1_BETA);
            out.regression += v / ns;
            g[j] = d / ns;
        }
        out.grad_regression.push(g);
    }
    let np = inp.scores.len().max(1) as f64;
    for &(z, fg) in inp.scores {
        let (v, g) = bce_with_logit(z, fg);
        out.score += v / np;
        out.grad_scores.push(g / np);
    }
    out.value = out.objectness + out.regression + out.score;
    out
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DkdLoss {
    pub value: f64,
    pub fmap: f64,
    pub objectness: f64,
    pub grad_fmap: Vec<f64>,
    /// Gradient on the new model's objectness logits.
    pub grad_objectness: Vec<f64>,
}

/// Mean squared difference of feature maps plus mean squared difference of
/// objectness probabilities on the old model's proposal anchors.
pub fn dkd_loss(old_fmap: &[f64], new_fmap: &[f64], old_logits: &[f64], new_logits: &[f64]) -> DkdLoss {
    assert_eq!(old_fmap.len(), new_fmap.len(), "feature maps must align");
    assert_eq!(old_logits.len(), new_logits.len(), "objectness lists must align");
    let mut out = DkdLoss::default();
    let nf = old_fmap.len().max(1) as f64;
    out.grad_fmap = old_fmap
        .iter()
        .zip(new_fmap)
        .map(|(o, n)| {
            let d = n - o;
            out.fmap += d * d / nf;
            2.0 * d / nf
        })
        .collect();
    let no = old_logits.len().max(1) as f64;
    out.grad_objectness = old_logits
        .iter()
        .zip(new_logits)
        .map(|(&o, &n)| {
            let (po, pn) = (sigmoid(o), sigmoid(n));
            let d = pn - po;
            out.objectness += d * d / no;
            2.0 * d * pn * (1.0 - pn) / no
        })
        .collect();
    out.value = out.fmap + out.objectness;
    out
}
