use crate::error::{Result, TecoError};
use crate::tensor::{Real, Tensor};

/// A fixed-length sequence plus the number of leading rows that came from
/// the original input.
#[derive(Clone, Debug, PartialEq)]
pub struct Padded<T> {
    pub data: Tensor<T>,
    pub valid_len: usize,
}

impl<T: Real> Padded<T> {
    /// `1` for original rows, `0` for padding.
    pub fn mask(&self) -> Vec<u8> {
        let len = self.data.shape()[0];
        (0..len).map(|i| u8::from(i < self.valid_len)).collect()
    }
}

/// Zero-pad or prefix-truncate `seq: [l, d]` to `[target_len, d]`.
pub fn pad_or_truncate<T: Real>(seq: &Tensor<T>, target_len: usize) -> Result<Padded<T>> {
    if target_len == 0 {
        return Err(TecoError::Config("target length must be positive".into()));
    }
    if seq.rank() != 2 {
        return Err(TecoError::arg(
            "pad_or_truncate",
            format!("needs [l, d], got {:?}", seq.shape()),
        ));
    }
    let (len, d) = (seq.shape()[0], seq.shape()[1]);
    let keep = len.min(target_len);
    let mut data = seq.data()[..keep * d].to_vec();
    data.resize(target_len * d, T::zero());
    Ok(Padded {
        data: Tensor::new(vec![target_len, d], data)?,
        valid_len: keep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitRng;
    use proptest::prelude::*;

    #[test]
    fn equal_length_unchanged() {
        let x = Tensor::<f32>::randn(&[4, 3], 1.0, &mut SplitRng::new(0));
        let p = pad_or_truncate(&x, 4).unwrap();
        assert_eq!(p.data, x);
        assert_eq!(p.mask(), vec![1, 1, 1, 1]);
    }

    #[test]
    fn short_sequence_gets_zero_rows() {
        let x = Tensor::<f32>::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = pad_or_truncate(&x, 4).unwrap();
        assert_eq!(p.data.data(), &[1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.mask(), vec![1, 1, 0, 0]);
    }

    #[test]
    fn long_audio_keeps_prefix() {
        let x = Tensor::<f32>::randn(&[500, 3], 1.0, &mut SplitRng::new(1));
        let p = pad_or_truncate(&x, 480).unwrap();
        assert_eq!(p.data.data(), &x.data()[..480 * 3]);
        assert_eq!(p.valid_len, 480);
    }

    #[test]
    fn zero_target_rejected() {
        let x = Tensor::<f32>::zeros(&[2, 2]);
        assert!(pad_or_truncate(&x, 0).is_err());
    }

    proptest! {
        #[test]
        fn prefix_rows_never_change(len in 1usize..40, target in 1usize..40, d in 1usize..5, seed in 0u64..100) {
            let x = Tensor::<f32>::randn(&[len, d], 1.0, &mut SplitRng::new(seed));
            let p = pad_or_truncate(&x, target).unwrap();
            let k = len.min(target);
            prop_assert_eq!(&p.data.data()[..k * d], &x.data()[..k * d]);
            prop_assert!(p.data.data()[k * d..].iter().all(|&v| v == 0.0));
            prop_assert_eq!(p.data.shape(), &[target, d]);
        }
    }
}
