use serde::{Deserialize, Serialize};

use super::{
    build_manifold, classifier_fidelity, frechet_from_moments, manifold_scores, moments, Features,
    ManifoldIndex, MomentSummary,
};
use crate::classifier::Classifier;
use crate::datasets::Dataset;
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "generation,fid,precision,recall,density,coverage,accuracy,cross_entropy";
pub const PER_CLASS_HEADER: &str = "generation,class,accuracy";

/// One generation's measurements against the original data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub generation: u32,
    pub fid: f64,
    /// Whether the covariance ridge entered the Fréchet computation.
    pub fid_regularized: bool,
    pub precision: f64,
    pub recall: f64,
    pub density: f64,
    pub coverage: f64,
    /// Manifold neighbourhood size used for the four scores above.
    pub k: usize,
    pub accuracy: Option<f64>,
    pub cross_entropy: Option<f64>,
    pub per_class_accuracy: Vec<Option<f64>>,
}

impl MetricReport {
    /// Checks the documented value ranges.
    pub fn check_ranges(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Integrity(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("precision", self.precision)?;
        unit("recall", self.recall)?;
        unit("coverage", self.coverage)?;
        if let Some(a) = self.accuracy {
            unit("accuracy", a)?;
        }
        for a in self.per_class_accuracy.iter().flatten() {
            unit("per-class accuracy", *a)?;
        }
        let nonneg = [
            ("density", Some(self.density)),
            ("fid", Some(self.fid)),
            ("cross_entropy", self.cross_entropy),
        ];
        for (name, v) in nonneg {
            if let Some(v) = v {
                if v.is_nan() || v < 0.0 {
                    return Err(Error::Integrity(format!("{name} = {v} is negative or NaN")));
                }
            }
        }
        Ok(())
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(format_sig6).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.generation,
            format_sig6(self.fid),
            format_sig6(self.precision),
            format_sig6(self.recall),
            format_sig6(self.density),
            format_sig6(self.coverage),
            opt(self.accuracy),
            opt(self.cross_entropy),
        )
    }
}

/// `%g`-style rendering with six significant digits.
pub fn format_sig6(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        trim(&format!("{v:.*}", (5 - exp) as usize))
    }
}

pub fn metrics_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn per_class_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from(PER_CLASS_HEADER);
    out.push('\n');
    for r in reports {
        for (c, a) in r.per_class_accuracy.iter().enumerate() {
            if let Some(a) = a {
                out.push_str(&format!("{},{c},{}\n", r.generation, format_sig6(*a)));
            }
        }
    }
    out
}

/// Space in which distribution metrics compare point sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSpace {
    /// Raw data coordinates.
    Identity,
    /// Penultimate activations of the experiment classifier.
    Classifier,
}

fn featurize(
    space: FeatureSpace,
    classifier: Option<&Classifier>,
    data_dim: usize,
    data: &Dataset,
) -> Result<Features> {
    if data.dim() != data_dim {
        return Err(Error::Shape {
            context: "evaluated data dimension",
            expected: data_dim,
            actual: data.dim(),
        });
    }
    match (space, classifier) {
        (FeatureSpace::Classifier, Some(c)) => c.features_batch(data.features()),
        _ => Ok(Features::identity(data)),
    }
}

/// Holds everything about the real data that every generation is compared
/// against, so it is computed once.
#[derive(Debug, Clone)]
pub struct Evaluator {
    space: FeatureSpace,
    classifier: Option<Classifier>,
    k: usize,
    data_dim: usize,
    real_moments: MomentSummary,
    real_manifold: ManifoldIndex,
}

impl Evaluator {
    pub fn new(
        real: &Dataset,
        space: FeatureSpace,
        classifier: Option<Classifier>,
        k: usize,
    ) -> Result<Self> {
        if space == FeatureSpace::Classifier && classifier.is_none() {
            return Err(Error::config("classifier feature space needs a classifier"));
        }
        if let Some(c) = &classifier {
            if c.input_dim() != real.dim() {
                return Err(Error::Shape {
                    context: "classifier input",
                    expected: real.dim(),
                    actual: c.input_dim(),
                });
            }
        }
        let feats = featurize(space, classifier.as_ref(), real.dim(), real)?;
        Ok(Evaluator {
            space,
            k,
            data_dim: real.dim(),
            real_moments: moments(&feats)?,
            real_manifold: build_manifold(&feats, k)?,
            classifier,
        })
    }

    pub fn space(&self) -> FeatureSpace {
        self.space
    }

    pub fn classifier(&self) -> Option<&Classifier> {
        self.classifier.as_ref()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn featurize(&self, data: &Dataset) -> Result<Features> {
        featurize(self.space, self.classifier.as_ref(), self.data_dim, data)
    }

    /// Full report for one generated set. Classifier metrics are present only
    /// when a classifier is configured and the samples carry labels.
    pub fn evaluate(&self, generated: &Dataset, generation: u32) -> Result<MetricReport> {
        let feats = self.featurize(generated)?;
        let fid = frechet_from_moments(&self.real_moments, &moments(&feats)?)?;
        let gen_manifold = build_manifold(&feats, self.k)?;
        let scores = manifold_scores(&self.real_manifold, &gen_manifold)?;
        let fidelity = match &self.classifier {
            Some(c) if generated.is_labeled() => Some(classifier_fidelity(c, generated)?),
            _ => None,
        };
        Ok(MetricReport {
            generation,
            fid: fid.distance,
            fid_regularized: fid.regularized,
            precision: scores.precision,
            recall: scores.recall,
            density: scores.density,
            coverage: scores.coverage,
            k: self.k,
            accuracy: fidelity.as_ref().map(|f| f.accuracy),
            cross_entropy: fidelity.as_ref().map(|f| f.cross_entropy),
            per_class_accuracy: fidelity.map(|f| f.per_class).unwrap_or_default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{circle_means, gaussian_mixture};

    #[test]
    fn sig6_matches_printf_g() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (0.5, "0.5"),
            (25.0, "25"),
            (1.0 / 3.0, "0.333333"),
            (2.0 / 3.0, "0.666667"),
            (123456.0, "123456"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (-2.5, "-2.5"),
            (999999.5, "1e+06"),
            (f64::NAN, "nan"),
        ];
        for (v, want) in cases {
            assert_eq!(format_sig6(v), want, "{v}");
        }
    }

    #[test]
    fn identity_law_on_mixture() {
        let data = gaussian_mixture(&circle_means(8, 4.0), 50, 0.3, 1).unwrap();
        let ev = Evaluator::new(&data, FeatureSpace::Identity, None, 3).unwrap();
        let r = ev.evaluate(&data, 0).unwrap();
        assert!(r.fid <= 1e-6, "{}", r.fid);
        assert_eq!((r.precision, r.recall, r.coverage), (1.0, 1.0, 1.0));
        assert!(r.density >= 1.0);
        assert_eq!(r.accuracy, None);
        r.check_ranges().unwrap();
    }

    #[test]
    fn csv_layout() {
        let r = MetricReport {
            generation: 2,
            fid: 0.125,
            fid_regularized: false,
            precision: 1.0,
            recall: 0.5,
            density: 1.25,
            coverage: 0.75,
            k: 3,
            accuracy: None,
            cross_entropy: None,
            per_class_accuracy: vec![],
        };
        assert_eq!(
            metrics_csv(std::slice::from_ref(&r)),
            format!("{METRICS_HEADER}\n2,0.125,1,0.5,1.25,0.75,,\n")
        );
        let labeled = MetricReport {
            accuracy: Some(0.9),
            cross_entropy: Some(0.2),
            per_class_accuracy: vec![Some(1.0), None, Some(0.8)],
            ..r
        };
        assert_eq!(
            per_class_csv(&[labeled]),
            format!("{PER_CLASS_HEADER}\n2,0,1\n2,2,0.8\n")
        );
    }
}
