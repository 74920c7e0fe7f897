//! Kolmogorov–Smirnov goodness-of-fit of fitted parameters to their sample,
//! and per-depth population summaries of the statistic.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Depth, ImageKey, PatientStack};
use crate::ggd::{GgdParams, Sample};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GofError {
    /// An image in the stacks has no fitted parameters.
    #[error("incomplete input: no fit for image {0}")]
    IncompleteInput(ImageKey),
}

/// KS distance of a sample to a fitted distribution, with the 99%
/// one-sample reference band 1.63/√n for context. The statistic is
/// reported as-is; no p-value is attached since the parameters were
/// estimated from the same data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsReport<T> {
    pub statistic: T,
    pub n: usize,
    pub band_99: T,
}

/// Two-sided exact ECDF distance:
/// D = max over the sorted sample of max(|i/n − F(x₍ᵢ₎)|, |(i−1)/n − F(x₍ᵢ₎)|).
pub fn ks_statistic<T: Real>(sample: &Sample<T>, params: &GgdParams<T>) -> KsReport<T> {
    let mut xs = sample.values().to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("sample values are finite"));
    let n = xs.len();
    let nf = T::of_usize(n);
    let mut d = T::zero();
    for (i, &x) in xs.iter().enumerate() {
        let f = params.cdf(x);
        let hi = (T::of_usize(i + 1) / nf - f).abs();
        let lo = (T::of_usize(i) / nf - f).abs();
        d = d.max(hi).max(lo);
    }
    KsReport { statistic: d, n, band_99: T::of(1.63) / nf.sqrt() }
}

/// Mean KS per depth over a set of images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthKs {
    pub depth: Depth,
    pub mean_ks: f64,
    pub n_images: usize,
}

/// Averages the per-image KS statistic across the population, grouped by
/// depth. Every image present in `stacks` must have an entry in `fits`.
pub fn mean_ks_by_depth(
    stacks: &[PatientStack],
    fits: &BTreeMap<ImageKey, GgdParams<f64>>,
) -> Result<Vec<DepthKs>, GofError> {
    let mut acc: BTreeMap<Depth, (f64, usize)> = BTreeMap::new();
    for stack in stacks {
        for (key, sample) in stack.images() {
            let params = fits.get(&key).ok_or_else(|| GofError::IncompleteInput(key.clone()))?;
            let ks = ks_statistic(sample, params);
            let slot = acc.entry(key.depth).or_insert((0.0, 0));
            slot.0 += ks.statistic;
            slot.1 += 1;
        }
    }
    Ok(acc
        .into_iter()
        .map(|(depth, (sum, count))| DepthKs { depth, mean_ks: sum / count as f64, n_images: count })
        .collect())
}

/// Writes the per-depth means as CSV: `depth_um,mean_ks,n_images`.
pub fn write_csv<W: Write>(rows: &[DepthKs], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "depth_um,mean_ks,n_images")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.depth, r.mean_ks, r.n_images)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::ClassLabel;

    fn p64(g: f64, b: f64, r: f64) -> GgdParams<f64> {
        GgdParams::new(g, b, r).unwrap()
    }

    #[test]
    fn single_point_at_the_median_gives_half() {
        // exponential median: cdf(ln 2) = 0.5
        let p = p64(0.0, 1.0, 1.0);
        let s = Sample::new(vec![std::f64::consts::LN_2]).unwrap();
        let r = ks_statistic(&s, &p);
        assert!((r.statistic - 0.5).abs() < 1e-12);
        assert_eq!(r.n, 1);
        assert!((r.band_99 - 1.63).abs() < 1e-12);
    }

    #[test]
    fn draws_from_the_distribution_stay_inside_the_band() {
        let p = p64(2.0, 15.0, 4.0);
        let s: Sample<f64> = p.sample(100_000, 17);
        let r = ks_statistic(&s, &p);
        assert!(r.statistic < r.band_99, "{} !< {}", r.statistic, r.band_99);
    }

    #[test]
    fn mass_mismatch_pushes_d_towards_one() {
        // all observations in the far lower tail of a ρ=4 fit
        let p = p64(2.0, 15.0, 4.0);
        let s = Sample::new(vec![2.0 + 1e-9, 2.0 + 2e-9, 2.0 + 3e-9]).unwrap();
        let r = ks_statistic(&s, &p);
        assert!(r.statistic > 0.999);
    }

    #[test]
    fn d_shrinks_as_n_grows() {
        let p = p64(2.0, 15.0, 4.0);
        let mut prev = f64::INFINITY;
        for &n in &[1_000usize, 10_000, 100_000] {
            let s: Sample<f64> = p.sample(n, 23);
            let d = ks_statistic(&s, &p).statistic;
            assert!(d < prev, "D did not shrink at n={n}");
            prev = d;
        }
    }

    fn one_image_stack(id: &str, depth: Depth, s: Sample<f64>) -> PatientStack {
        let mut acq = BTreeMap::new();
        acq.insert(depth, s);
        PatientStack::new(id.into(), ClassLabel::Healthy, vec![acq]).unwrap()
    }

    #[test]
    fn grouping_and_missing_fit_contract() {
        let p = p64(0.0, 1.0, 1.0);
        let s: Sample<f64> = p.sample(500, 3);
        let expected = ks_statistic(&s, &p).statistic;

        let stacks = vec![
            one_image_stack("a", Depth(100), s.clone()),
            one_image_stack("b", Depth(100), s.clone()),
            one_image_stack("c", Depth(200), s.clone()),
        ];
        let mut fits = BTreeMap::new();
        for st in &stacks {
            for (k, _) in st.images() {
                fits.insert(k, p);
            }
        }
        let rows = mean_ks_by_depth(&stacks, &fits).unwrap();
        assert_eq!(rows.len(), 2);
        // identical images and fits: the mean equals the single value
        assert!((rows[0].mean_ks - expected).abs() < 1e-15);
        assert_eq!(rows[0].n_images, 2);
        // a depth present in one patient only averages over that one value
        assert_eq!(rows[1].n_images, 1);
        assert!((rows[1].mean_ks - expected).abs() < 1e-15);

        fits.remove(&ImageKey { patient: "c".into(), acquisition: 0, depth: Depth(200) });
        assert!(matches!(
            mean_ks_by_depth(&stacks, &fits),
            Err(GofError::IncompleteInput(_))
        ));
    }

    #[test]
    fn csv_layout() {
        let rows = vec![DepthKs { depth: Depth(4950), mean_ks: 0.0125, n_images: 45 }];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "depth_um,mean_ks,n_images\n49.5,0.0125,45\n"
        );
    }

    proptest::proptest! {
        /// D is invariant when sample and distribution move through the same
        /// strictly increasing affine map.
        #[test]
        fn ks_affine_invariance(a in 0.1f64..10.0, b in -20.0f64..20.0, seed in 0u64..50) {
            let p = p64(2.0, 15.0, 4.0);
            let s: Sample<f64> = p.sample(200, seed);
            let d0 = ks_statistic(&s, &p).statistic;
            let mapped = s.map(|x| a * x + b).unwrap();
            let q = GgdParams::new(a * 2.0 + b, a * 15.0, 4.0).unwrap();
            let d1 = ks_statistic(&mapped, &q).statistic;
            proptest::prop_assert!((d0 - d1).abs() < 1e-9);
        }
    }
}
