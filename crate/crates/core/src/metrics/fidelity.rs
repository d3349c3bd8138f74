use crate::classifier::{argmax, cross_entropy, Classifier};
use crate::datasets::Dataset;
use crate::error::{Error, Result};

/// Classifier agreement with the conditioning labels of a generated set.
#[derive(Debug, Clone, PartialEq)]
pub struct Fidelity {
    pub accuracy: f64,
    /// Mean of `-ln p(label)`.
    pub cross_entropy: f64,
    /// Accuracy restricted to each conditioning class; `None` when absent.
    pub per_class: Vec<Option<f64>>,
}

pub fn classifier_fidelity(clf: &Classifier, generated: &Dataset) -> Result<Fidelity> {
    let labels = generated
        .labels()
        .ok_or_else(|| Error::usage("classifier fidelity needs labeled samples"))?;
    if generated.is_empty() {
        return Err(Error::usage("classifier fidelity of an empty dataset"));
    }
    if generated.dim() != clf.input_dim() {
        return Err(Error::Shape {
            context: "classifier fidelity input",
            expected: clf.input_dim(),
            actual: generated.dim(),
        });
    }
    let k = clf.num_classes();
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
        return Err(Error::usage(format!(
            "label {bad} outside the classifier's {k} classes"
        )));
    }
    let logits = clf.logits_batch(generated.features())?;
    let mut correct = vec![0usize; k];
    let mut seen = vec![0usize; k];
    let mut ce = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let l = l as usize;
        let row = &logits[i * k..(i + 1) * k];
        seen[l] += 1;
        if argmax(row) == l {
            correct[l] += 1;
        }
        ce += cross_entropy(row, l);
    }
    let n = labels.len() as f64;
    Ok(Fidelity {
        accuracy: correct.iter().sum::<usize>() as f64 / n,
        cross_entropy: ce / n,
        per_class: correct
            .iter()
            .zip(&seen)
            .map(|(&c, &s)| (s > 0).then(|| c as f64 / s as f64))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{train_classifier, ClassifierConfig};
    use crate::datasets::{glyph_dataset, GlyphOptions};
    use crate::nn::{Network, NetworkSpec};
    use crate::rng::Philox;

    fn uniform_stub(d: usize, k: usize) -> Classifier {
        let spec = NetworkSpec::plain(d, vec![4], k);
        let net = Network::from_params(spec.clone(), vec![0.0; spec.param_count()]).unwrap();
        Classifier::from_network(net, 0.0, 0.0).unwrap()
    }

    #[test]
    fn uniform_stub_cross_entropy_is_ln_k() {
        let mut rng = Philox::new(3);
        let feats = (0..50 * 4).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let labels = (0..50).map(|i| (i % 10) as u16).collect();
        let data = Dataset::new(4, feats, Some(labels), 10).unwrap();
        let f = classifier_fidelity(&uniform_stub(4, 10), &data).unwrap();
        assert!((f.cross_entropy - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn training_data_reproduces_recorded_accuracy() {
        let data = glyph_dataset(GlyphOptions::default(), 11).unwrap();
        let clf = train_classifier(&data, &ClassifierConfig::default(), 2).unwrap();
        let f = classifier_fidelity(&clf, &data).unwrap();
        assert_eq!(f.accuracy, clf.train_accuracy());
        assert_eq!(f.per_class.len(), 10);
        assert!(f.per_class.iter().all(|a| a.is_some()));
    }

    #[test]
    fn random_label_permutation_gives_chance_accuracy() {
        let data = glyph_dataset(GlyphOptions::default(), 11).unwrap();
        let clf = train_classifier(&data, &ClassifierConfig::default(), 2).unwrap();
        let mut labels = data.labels().unwrap().to_vec();
        Philox::new(77).shuffle(&mut labels);
        let shuffled = Dataset::new(64, data.features().to_vec(), Some(labels), 10).unwrap();
        let p = classifier_fidelity(&clf, &shuffled).unwrap();
        assert!((p.accuracy - 0.1).abs() <= 0.05, "{}", p.accuracy);
    }

    #[test]
    fn unlabeled_is_usage_error() {
        let data = Dataset::new(4, vec![0.0; 8], None, 0).unwrap();
        assert!(matches!(
            classifier_fidelity(&uniform_stub(4, 3), &data),
            Err(Error::Usage(_))
        ));
    }
}
