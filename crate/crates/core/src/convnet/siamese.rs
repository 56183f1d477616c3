use super::net::PreparedNet;
use super::{ConvNetError, HeadKind, NetworkParams};
use crate::imaging::Patch;

/// Descriptor of one patch: the flattened output of a Siamese branch.
pub fn siamese_embed(params: &NetworkParams, patch: &Patch) -> Result<Vec<f64>, ConvNetError> {
    let spec = params.spec();
    if spec.head != HeadKind::Siamese {
        return Err(ConvNetError::ShapeMismatch(
            "network is not a Siamese branch".into(),
        ));
    }
    if patch.size() != spec.input_size {
        return Err(ConvNetError::ShapeMismatch(format!(
            "patch side {} but the branch expects {}",
            patch.size(),
            spec.input_size
        )));
    }
    Ok(PreparedNet::new(params).features(patch.pixels()))
}

/// Euclidean distance between two descriptors.
pub fn siamese_distance(d1: &[f64], d2: &[f64]) -> Result<f64, ConvNetError> {
    if d1.len() != d2.len() {
        return Err(ConvNetError::LengthMismatch(d1.len(), d2.len()));
    }
    Ok(d1
        .iter()
        .zip(d2)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convnet::NetSpec;
    use proptest::prelude::*;

    fn patch(size: usize, k: usize) -> Patch {
        let px = (0..size * size).map(|i| (((i * 7 + k * 13) % 17) as f64 - 8.0) / 8.0).collect();
        Patch::new(size, px, (0, 0)).unwrap()
    }

    #[test]
    fn embedding_contract() {
        let spec = NetSpec::default_for(32, HeadKind::Siamese).unwrap();
        let zero = NetworkParams::zeros(&spec);
        let d = siamese_embed(&zero, &patch(32, 1)).unwrap();
        assert_eq!(d.len(), spec.feature_len());
        assert!(d.iter().all(|&v| v == 0.0));

        let params = NetworkParams::init(&spec, 4);
        let p = patch(32, 2);
        let d1 = siamese_embed(&params, &p).unwrap();
        let d2 = siamese_embed(&params, &p).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(siamese_distance(&d1, &d2).unwrap(), 0.0);

        let two = NetworkParams::init(&NetSpec::two_channel(32).unwrap(), 4);
        assert!(siamese_embed(&two, &p).is_err());
        assert!(siamese_embed(&params, &patch(16, 1)).is_err());
    }

    #[test]
    fn distance_examples() {
        assert!((siamese_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            siamese_distance(&[1.0], &[1.0, 2.0]),
            Err(ConvNetError::LengthMismatch(1, 2))
        ));
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(
            v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40)
        ) {
            let (d1, d2): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let d = siamese_distance(&d1, &d2).unwrap();
            let mut sq = 0.0;
            for i in 0..d1.len() {
                sq += (d1[i] - d2[i]) * (d1[i] - d2[i]);
            }
            prop_assert!((d - sq.sqrt()).abs() <= 1e-9);
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d, siamese_distance(&d2, &d1).unwrap());
            prop_assert_eq!(siamese_distance(&d1, &d1).unwrap(), 0.0);
        }
    }
}
