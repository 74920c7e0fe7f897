//! Linear soft-margin SVM over per-patient parameter features, evaluated
//! patient-wise by leave-one-out with random acquisition selection, plus the
//! confusion-matrix metrics (lentigo is the positive class).

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::ClassLabel;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClassifyError {
    #[error("degenerate training set: only one class present")]
    DegenerateTraining,
    #[error("feature vectors must share one dimensionality")]
    MixedDimensions,
    #[error("leave-one-out needs at least three patients")]
    TooFewPatients,
    #[error("patient {0} appears with conflicting labels")]
    ConflictingLabels(String),
    #[error("classification labels must be healthy or lentigo, got {0}")]
    UnlabeledPatient(String),
}

/// One candidate feature vector: a patient, its class, and one parameter's
/// estimates across the depth window. A patient may contribute several
/// vectors (one per acquisition); leave-one-out picks one per repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub patient: String,
    pub label: ClassLabel,
    pub features: Vec<f64>,
}

/// Linear decision function sign(w·x + b).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearSvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    /// Boundary ties (decision exactly 0) go to lentigo.
    pub fn predict(&self, x: &[f64]) -> ClassLabel {
        if self.decision(x) >= 0.0 {
            ClassLabel::Lentigo
        } else {
            ClassLabel::Healthy
        }
    }
}

fn y_of(label: ClassLabel) -> f64 {
    match label {
        ClassLabel::Lentigo => 1.0,
        _ => -1.0,
    }
}

/// Regularized hinge objective ½(‖w‖² + b²) + C Σ max(0, 1 − yᵢ(w·xᵢ + b)).
/// The bias is regularized (feature augmentation), which keeps the dual a
/// plain box-constrained problem.
pub fn primal_objective(model: &LinearSvm, data: &[FeatureVector], c: f64) -> f64 {
    let reg = 0.5
        * (model.weights.iter().map(|w| w * w).sum::<f64>() + model.bias * model.bias);
    let hinge: f64 = data
        .iter()
        .map(|fv| (1.0 - y_of(fv.label) * model.decision(&fv.features)).max(0.0))
        .sum();
    reg + c * hinge
}

/// Trains the soft-margin linear SVM by coordinate ascent on the dual:
/// max Σαᵢ − ½‖Σαᵢyᵢx̃ᵢ‖² over 0 ≤ αᵢ ≤ C, with x̃ the bias-augmented
/// feature. Sweeps stop when the duality gap falls below 1e-6·(1+|primal|).
pub fn train_svm(data: &[FeatureVector], c: f64) -> Result<LinearSvm, ClassifyError> {
    assert!(c > 0.0, "C must be positive");
    let n = data.len();
    if n == 0 {
        return Err(ClassifyError::DegenerateTraining);
    }
    let dim = data[0].features.len();
    if data.iter().any(|fv| fv.features.len() != dim) {
        return Err(ClassifyError::MixedDimensions);
    }
    let has_pos = data.iter().any(|fv| fv.label == ClassLabel::Lentigo);
    let has_neg = data.iter().any(|fv| fv.label != ClassLabel::Lentigo);
    if !has_pos || !has_neg {
        return Err(ClassifyError::DegenerateTraining);
    }

    // Q_ii = x̃ᵢ·x̃ᵢ = xᵢ·xᵢ + 1
    let qii: Vec<f64> = data
        .iter()
        .map(|fv| fv.features.iter().map(|v| v * v).sum::<f64>() + 1.0)
        .collect();
    let ys: Vec<f64> = data.iter().map(|fv| y_of(fv.label)).collect();

    let mut alpha = vec![0.0f64; n];
    let mut w = vec![0.0f64; dim];
    let mut b = 0.0f64;

    // the gap closes in tens of sweeps on separable data; the cap only
    // bites on noise-label inputs where extra sweeps change nothing
    const GAP_TOL: f64 = 1e-6;
    const MAX_SWEEPS: usize = 2_000;
    for _sweep in 0..MAX_SWEEPS {
        for i in 0..n {
            let fv = &data[i];
            let margin = ys[i]
                * (w.iter().zip(&fv.features).map(|(wk, xk)| wk * xk).sum::<f64>() + b);
            let grad = margin - 1.0;
            let new_alpha = (alpha[i] - grad / qii[i]).clamp(0.0, c);
            let delta = new_alpha - alpha[i];
            if delta != 0.0 {
                alpha[i] = new_alpha;
                for (wk, xk) in w.iter_mut().zip(&fv.features) {
                    *wk += delta * ys[i] * xk;
                }
                b += delta * ys[i];
            }
        }
        let model = LinearSvm { weights: w.clone(), bias: b };
        let primal = primal_objective(&model, data, c);
        let wsq = w.iter().map(|v| v * v).sum::<f64>() + b * b;
        let dual = alpha.iter().sum::<f64>() - 0.5 * wsq;
        if primal - dual <= GAP_TOL * (1.0 + primal.abs()) {
            return Ok(model);
        }
    }
    Ok(LinearSvm { weights: w, bias: b })
}

/// Confusion counts (possibly fractional: they average over repeats).
/// Lentigo is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_positive: f64,
    pub false_negative: f64,
    pub false_positive: f64,
    pub true_negative: f64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> f64 {
        self.true_positive + self.false_negative + self.false_positive + self.true_negative
    }
}

/// The four ratios as percentages; a metric with a zero denominator is
/// undefined and reported as `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub accuracy: Option<f64>,
}

impl MetricsReport {
    /// Percentages truncated to one decimal, the table convention
    /// (22/27 shows as 81.4).
    pub fn rounded(&self) -> MetricsReport {
        let trunc = |v: Option<f64>| v.map(|x| (x * 10.0).floor() / 10.0);
        MetricsReport {
            sensitivity: trunc(self.sensitivity),
            specificity: trunc(self.specificity),
            precision: trunc(self.precision),
            accuracy: trunc(self.accuracy),
        }
    }
}

/// sensitivity TP/(TP+FN), specificity TN/(FP+TN), precision TP/(TP+FP),
/// accuracy (TP+TN)/total, all as percentages.
pub fn metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let ratio = |num: f64, den: f64| if den > 0.0 { Some(100.0 * num / den) } else { None };
    MetricsReport {
        sensitivity: ratio(cm.true_positive, cm.true_positive + cm.false_negative),
        specificity: ratio(cm.true_negative, cm.false_positive + cm.true_negative),
        precision: ratio(cm.true_positive, cm.true_positive + cm.false_positive),
        accuracy: ratio(cm.true_positive + cm.true_negative, cm.total()),
    }
}

/// Leave-one-out outcome: confusion counts averaged over the repeats and
/// the derived metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooOutcome {
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
    pub repeats: usize,
}

/// Standardizes train and test rows with training-fold statistics only.
/// Coordinates with zero spread carry no information and map to 0.
fn zscore(train: &[Vec<f64>], test: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let dim = test.len();
    let n = train.len() as f64;
    let mut mean = vec![0.0; dim];
    let mut sd = vec![0.0; dim];
    for row in train {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    for row in train {
        for k in 0..dim {
            let d = row[k] - mean[k];
            sd[k] += d * d;
        }
    }
    for s in &mut sd {
        *s = (*s / n).sqrt();
    }
    let scale = |row: &[f64]| {
        row.iter()
            .enumerate()
            .map(|(k, v)| if sd[k] > 1e-12 { (v - mean[k]) / sd[k] } else { 0.0 })
            .collect::<Vec<f64>>()
    };
    (train.iter().map(|r| scale(r)).collect(), scale(test))
}

/// Patient-wise leave-one-out, repeated with one acquisition variant drawn
/// at random per patient and repeat. Features are z-scored per coordinate
/// from the training fold. Counts are averaged over the repeats.
pub fn leave_one_out(
    data: &[FeatureVector],
    c: f64,
    repeats: usize,
    seed: u64,
) -> Result<LooOutcome, ClassifyError> {
    assert!(repeats >= 1, "at least one repeat");
    let dim = data.first().map(|fv| fv.features.len()).unwrap_or(0);
    if data.iter().any(|fv| fv.features.len() != dim) {
        return Err(ClassifyError::MixedDimensions);
    }
    // group the variants by patient, checking label consistency
    let mut patients: BTreeMap<&str, (ClassLabel, Vec<&FeatureVector>)> = BTreeMap::new();
    for fv in data {
        if fv.label == ClassLabel::Unlabeled {
            return Err(ClassifyError::UnlabeledPatient(fv.patient.clone()));
        }
        let entry = patients.entry(&fv.patient).or_insert((fv.label, Vec::new()));
        if entry.0 != fv.label {
            return Err(ClassifyError::ConflictingLabels(fv.patient.clone()));
        }
        entry.1.push(fv);
    }
    if patients.len() < 3 {
        return Err(ClassifyError::TooFewPatients);
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut acc = ConfusionMatrix::default();
    for _ in 0..repeats {
        let selected: Vec<&FeatureVector> = patients
            .values()
            .map(|(_, variants)| variants[rng.gen_range(0..variants.len())])
            .collect();
        for hold in 0..selected.len() {
            let train_rows: Vec<Vec<f64>> = selected
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != hold)
                .map(|(_, fv)| fv.features.clone())
                .collect();
            let (scaled_train, scaled_test) = zscore(&train_rows, &selected[hold].features);
            let train_set: Vec<FeatureVector> = selected
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != hold)
                .zip(scaled_train)
                .map(|((_, fv), features)| FeatureVector {
                    patient: fv.patient.clone(),
                    label: fv.label,
                    features,
                })
                .collect();
            let model = train_svm(&train_set, c)?;
            let predicted = model.predict(&scaled_test);
            let actual = selected[hold].label;
            match (actual, predicted) {
                (ClassLabel::Lentigo, ClassLabel::Lentigo) => acc.true_positive += 1.0,
                (ClassLabel::Lentigo, _) => acc.false_negative += 1.0,
                (_, ClassLabel::Lentigo) => acc.false_positive += 1.0,
                _ => acc.true_negative += 1.0,
            }
        }
    }
    let r = repeats as f64;
    let confusion = ConfusionMatrix {
        true_positive: acc.true_positive / r,
        false_negative: acc.false_negative / r,
        false_positive: acc.false_positive / r,
        true_negative: acc.true_negative / r,
    };
    Ok(LooOutcome { confusion, metrics: metrics(&confusion), repeats })
}

/// Confusion table in the two-class report layout, plus derived rates.
pub fn write_confusion_csv<W: Write>(
    parameter: &str,
    out_of: &LooOutcome,
    out: &mut W,
) -> std::io::Result<()> {
    let cm = &out_of.confusion;
    let m = &out_of.metrics;
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    writeln!(out, "parameter,row,predicted_lentigo,predicted_healthy,rate_pct")?;
    writeln!(
        out,
        "{parameter},lentigo,{},{},{}",
        cm.true_positive,
        cm.false_negative,
        fmt_opt(m.rounded().sensitivity)
    )?;
    writeln!(
        out,
        "{parameter},healthy,{},{},{}",
        cm.false_positive,
        cm.true_negative,
        fmt_opt(m.rounded().specificity)
    )?;
    writeln!(out, "{parameter},precision,{},,", fmt_opt(m.rounded().precision))?;
    writeln!(out, "{parameter},accuracy,{},,", fmt_opt(m.rounded().accuracy))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(patient: &str, label: ClassLabel, features: &[f64]) -> FeatureVector {
        FeatureVector { patient: patient.into(), label, features: features.to_vec() }
    }

    #[test]
    fn separable_one_dimensional_data() {
        let data = vec![
            fv("a", ClassLabel::Healthy, &[-1.0]),
            fv("b", ClassLabel::Lentigo, &[1.0]),
        ];
        let model = train_svm(&data, 1.0).unwrap();
        assert_eq!(model.predict(&[-1.0]), ClassLabel::Healthy);
        assert_eq!(model.predict(&[1.0]), ClassLabel::Lentigo);
    }

    #[test]
    fn conflicting_duplicates_are_tolerated() {
        let data = vec![
            fv("a", ClassLabel::Healthy, &[0.5]),
            fv("b", ClassLabel::Lentigo, &[0.5]),
            fv("c", ClassLabel::Healthy, &[-1.0]),
            fv("d", ClassLabel::Lentigo, &[1.0]),
        ];
        let model = train_svm(&data, 1.0).unwrap();
        // the conflicting pair cannot both be right
        let correct = [
            model.predict(&[0.5]) == ClassLabel::Healthy,
            model.predict(&[0.5]) == ClassLabel::Lentigo,
        ];
        assert_eq!(correct.iter().filter(|&&c| c).count(), 1);
    }

    #[test]
    fn single_class_is_degenerate() {
        let data = vec![
            fv("a", ClassLabel::Lentigo, &[1.0]),
            fv("b", ClassLabel::Lentigo, &[2.0]),
        ];
        assert_eq!(train_svm(&data, 1.0).unwrap_err(), ClassifyError::DegenerateTraining);
    }

    /// Projected subgradient descent on the same primal, run long enough to
    /// serve as an independent slow reference for the optimum.
    fn subgradient_reference(data: &[FeatureVector], c: f64, iters: usize) -> f64 {
        let dim = data[0].features.len();
        let mut w = vec![0.0f64; dim];
        let mut b = 0.0f64;
        let mut best = f64::INFINITY;
        for k in 0..iters {
            let eta = 2.0 / (k as f64 + 2.0);
            let mut gw = w.clone();
            let mut gb = b;
            for f in data {
                let y = y_of(f.label);
                let margin = y * (w.iter().zip(&f.features).map(|(a, x)| a * x).sum::<f64>() + b);
                if margin < 1.0 {
                    for (g, x) in gw.iter_mut().zip(&f.features) {
                        *g -= c * y * x;
                    }
                    gb -= c * y;
                }
            }
            for (wk, g) in w.iter_mut().zip(&gw) {
                *wk -= eta * g;
            }
            b -= eta * gb;
            let obj = primal_objective(&LinearSvm { weights: w.clone(), bias: b }, data, c);
            best = best.min(obj);
        }
        best
    }

    #[test]
    fn objective_matches_the_slow_solver() {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for case in 0..5 {
            let n = 12 + case * 3;
            let data: Vec<FeatureVector> = (0..n)
                .map(|i| {
                    let label =
                        if i % 2 == 0 { ClassLabel::Healthy } else { ClassLabel::Lentigo };
                    let shift = if label == ClassLabel::Lentigo { 0.8 } else { -0.8 };
                    let feats: Vec<f64> =
                        (0..3).map(|_| shift + rng.gen_range(-1.0..1.0)).collect();
                    fv(&format!("p{i}"), label, &feats)
                })
                .collect();
            let model = train_svm(&data, 1.0).unwrap();
            let fast = primal_objective(&model, &data, 1.0);
            let slow = subgradient_reference(&data, 1.0, 60_000);
            assert!(
                ((fast - slow) / slow.abs()).abs() < 1e-4,
                "case {case}: {fast} vs {slow}"
            );
        }
    }

    #[test]
    fn table_metrics_fixtures() {
        // averaged confusion counts 22/5/2/16
        let cm = ConfusionMatrix {
            true_positive: 22.0,
            false_negative: 5.0,
            false_positive: 2.0,
            true_negative: 16.0,
        };
        let m = metrics(&cm).rounded();
        assert_eq!(m.sensitivity, Some(81.4));
        assert_eq!(m.specificity, Some(88.8));
        assert_eq!(m.precision, Some(91.6));
        assert_eq!(m.accuracy, Some(84.4));

        let cm = ConfusionMatrix {
            true_positive: 24.0,
            false_negative: 3.0,
            false_positive: 5.0,
            true_negative: 13.0,
        };
        let m = metrics(&cm).rounded();
        assert_eq!(m.sensitivity, Some(88.8));
        assert_eq!(m.specificity, Some(72.2));
        assert_eq!(m.precision, Some(82.7));
        assert_eq!(m.accuracy, Some(82.2));

        let cm = ConfusionMatrix {
            true_positive: 1.0,
            false_negative: 0.0,
            false_positive: 0.0,
            true_negative: 1.0,
        };
        let m = metrics(&cm).rounded();
        assert_eq!(m.sensitivity, Some(100.0));
        assert_eq!(m.specificity, Some(100.0));
        assert_eq!(m.precision, Some(100.0));
        assert_eq!(m.accuracy, Some(100.0));
    }

    #[test]
    fn undefined_metrics_are_none() {
        let cm = ConfusionMatrix {
            true_positive: 0.0,
            false_negative: 0.0,
            false_positive: 2.0,
            true_negative: 8.0,
        };
        let m = metrics(&cm);
        assert_eq!(m.sensitivity, None);
        assert_eq!(m.precision, Some(0.0));
        assert!(m.accuracy.is_some());
    }

    #[test]
    fn metrics_identities_before_rounding() {
        let cm = ConfusionMatrix {
            true_positive: 22.0,
            false_negative: 5.0,
            false_positive: 2.0,
            true_negative: 16.0,
        };
        let m = metrics(&cm);
        let sens = m.sensitivity.unwrap();
        assert!((sens / 100.0 * 27.0 - 22.0).abs() < 1e-12);
        let spec = m.specificity.unwrap();
        assert!((spec / 100.0 * 18.0 - 16.0).abs() < 1e-12);
        let prec = m.precision.unwrap();
        assert!((prec / 100.0 * 24.0 - 22.0).abs() < 1e-12);
        let acc = m.accuracy.unwrap();
        assert!((acc / 100.0 * 45.0 - 38.0).abs() < 1e-12);
    }

    fn cohort(sep: f64, seed: u64, n_each: usize) -> Vec<FeatureVector> {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        for i in 0..(2 * n_each) {
            let label = if i < n_each { ClassLabel::Healthy } else { ClassLabel::Lentigo };
            let shift = if label == ClassLabel::Lentigo { sep } else { 0.0 };
            for _acq in 0..2 {
                let feats: Vec<f64> =
                    (0..5).map(|_| shift + rng.gen_range(-1.0..1.0)).collect();
                data.push(fv(&format!("p{i:02}"), label, &feats));
            }
        }
        data
    }

    #[test]
    fn loo_on_a_separable_cohort_is_perfect() {
        let data = cohort(5.0, 3, 10);
        let out = leave_one_out(&data, 1.0, 20, 9).unwrap();
        assert_eq!(out.metrics.accuracy, Some(100.0));
        assert_eq!(out.confusion.total(), 20.0);
    }

    #[test]
    fn loo_is_deterministic() {
        let data = cohort(1.0, 5, 8);
        let a = leave_one_out(&data, 1.0, 10, 42).unwrap();
        let b = leave_one_out(&data, 1.0, 10, 42).unwrap();
        assert_eq!(a, b);
        let c = leave_one_out(&data, 1.0, 10, 43).unwrap();
        assert!(a != c || a.confusion == c.confusion);
    }

    #[test]
    fn loo_guards() {
        let data = cohort(1.0, 5, 1);
        assert_eq!(
            leave_one_out(&data, 1.0, 5, 1).unwrap_err(),
            ClassifyError::TooFewPatients
        );
        let mut bad = cohort(1.0, 5, 4);
        bad[0].features.pop();
        assert_eq!(
            leave_one_out(&bad, 1.0, 5, 1).unwrap_err(),
            ClassifyError::MixedDimensions
        );
        let mut conflict = cohort(1.0, 5, 4);
        conflict[1].label = ClassLabel::Lentigo;
        assert!(matches!(
            leave_one_out(&conflict, 1.0, 5, 1),
            Err(ClassifyError::ConflictingLabels(_))
        ));
    }

    #[test]
    fn standardization_makes_loo_invariant_to_feature_rescaling() {
        let data = cohort(2.0, 11, 8);
        let base = leave_one_out(&data, 1.0, 15, 7).unwrap();
        let rescaled: Vec<FeatureVector> = data
            .iter()
            .map(|f| {
                let mut features = f.features.clone();
                features[2] = features[2] * 1000.0 - 77.0;
                FeatureVector { patient: f.patient.clone(), label: f.label, features }
            })
            .collect();
        let moved = leave_one_out(&rescaled, 1.0, 15, 7).unwrap();
        assert_eq!(base.confusion, moved.confusion);
    }

    proptest::proptest! {
        /// scaling (w, b) by any positive factor leaves predictions alone
        #[test]
        fn decision_scale_invariance(scale in 1e-3f64..1e3, x in -5.0f64..5.0, y in -5.0f64..5.0) {
            let m = LinearSvm { weights: vec![0.7, -1.3], bias: 0.2 };
            let scaled = LinearSvm {
                weights: m.weights.iter().map(|w| w * scale).collect(),
                bias: m.bias * scale,
            };
            proptest::prop_assert_eq!(m.predict(&[x, y]), scaled.predict(&[x, y]));
        }
    }
}
