//! Seven-point smoothing and 50 %-overlap sliding windows.

use super::{DataError, Trial, Window, NUM_CHANNELS, WINDOW_SIZES};

/// Centered moving average. Interior points use the full `width`-point
/// window; edges shrink symmetrically (half-width `min(w/2, i, n-1-i)`).
pub fn moving_average(signal: &[f64], width: usize) -> Result<Vec<f64>, DataError> {
    if width == 0 || width % 2 == 0 {
        return Err(DataError::BadFilterWidth(width));
    }
    if signal.len() < width {
        return Err(DataError::TooShort {
            got: signal.len(),
            min: width,
        });
    }
    let n = signal.len();
    let half = width / 2;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let h = half.min(i).min(n - 1 - i);
        let lo = i - h;
        let hi = i + h;
        let sum: f64 = signal[lo..=hi].iter().sum();
        out.push(sum / (hi - lo + 1) as f64);
    }
    Ok(out)
}

/// Applies the seven-point moving average to the three acceleration channels
/// of a trial, mirroring the upstream smoothing of derived accelerations.
/// Gyroscope channels pass through untouched.
pub fn smooth_trial(trial: &Trial) -> Result<Trial, DataError> {
    const WIDTH: usize = 7;
    let n = trial.len();
    let mut out = trial.clone();
    for c in 0..3 {
        let series: Vec<f64> = trial.samples.iter().map(|s| s.channels[c]).collect();
        let smoothed = moving_average(&series, WIDTH)?;
        for i in 0..n {
            out.samples[i].channels[c] = smoothed[i];
        }
    }
    Ok(out)
}

/// Cuts one trial into windows of `width` samples with 50 % overlap
/// (stride `width / 2`). The window label is the label of its final sample.
pub fn make_windows(trial: &Trial, width: usize) -> Result<Vec<Window>, DataError> {
    if !WINDOW_SIZES.contains(&width) {
        return Err(DataError::BadWindowSize(width));
    }
    let n = trial.len();
    if n < width {
        return Err(DataError::TooShort { got: n, min: width });
    }
    let stride = width / 2;
    let count = (n - width) / stride + 1;
    let key = trial.key();
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * stride;
        let mut data = Vec::with_capacity(width * NUM_CHANNELS);
        for s in &trial.samples[start..start + width] {
            data.extend_from_slice(&s.channels);
        }
        out.push(Window {
            data,
            width,
            label: trial.samples[start + width - 1].label,
            trial: key.clone(),
            start,
        });
    }
    Ok(out)
}

/// Windows every trial independently, so windows never cross trial
/// boundaries. Trials shorter than the window are skipped.
pub fn windows_for_trials(trials: &[Trial], width: usize) -> Result<Vec<Window>, DataError> {
    if !WINDOW_SIZES.contains(&width) {
        return Err(DataError::BadWindowSize(width));
    }
    let mut out = Vec::new();
    for t in trials {
        if t.len() >= width {
            out.extend(make_windows(t, width)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Activity, GaitLabel, LabeledSample, Stiffness};

    fn trial_with_channel(values: &[f64], labels: Option<&[GaitLabel]>) -> Trial {
        Trial {
            subject: "T".into(),
            activity: Activity::Spin90,
            stiffness: Stiffness::Stiff,
            trial_index: 1,
            samples: values
                .iter()
                .enumerate()
                .map(|(i, &v)| LabeledSample {
                    tick: i as u64,
                    channels: [v; 6],
                    label: labels.map_or(GaitLabel::Sw, |l| l[i]),
                })
                .collect(),
        }
    }

    #[test]
    fn constant_series_unchanged() {
        let s = vec![3.5; 20];
        assert_eq!(moving_average(&s, 7).unwrap(), s);
    }

    #[test]
    fn unit_impulse_spreads_over_seven_taps() {
        let mut s = vec![0.0; 13];
        s[6] = 1.0;
        let out = moving_average(&s, 7).unwrap();
        for (i, v) in out.iter().enumerate() {
            if (3..=9).contains(&i) {
                assert!((v - 1.0 / 7.0).abs() < 1e-15, "i={i} v={v}");
            } else {
                assert_eq!(*v, 0.0, "i={i}");
            }
        }
    }

    #[test]
    fn ramp_matches_direct_convolution_oracle() {
        let s: Vec<f64> = (0..13).map(f64::from).collect();
        let out = moving_average(&s, 7).unwrap();
        // independent oracle: direct shrinking-window mean
        for i in 0..13usize {
            let h = 3.min(i).min(12 - i);
            let mut acc = 0.0;
            for j in (i - h)..=(i + h) {
                acc += s[j];
            }
            let want = acc / (2 * h + 1) as f64;
            assert!((out[i] - want).abs() < 1e-13);
        }
        // interior of a symmetric ramp reproduces the input
        for i in 3..=9 {
            assert!((out[i] - s[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn moving_average_rejects_short_or_even() {
        assert!(matches!(
            moving_average(&[1.0; 5], 7),
            Err(DataError::TooShort { .. })
        ));
        assert!(matches!(
            moving_average(&[1.0; 10], 4),
            Err(DataError::BadFilterWidth(4))
        ));
    }

    #[test]
    fn window_counts_match_formula() {
        let t = trial_with_channel(&vec![0.0; 100], None);
        assert_eq!(make_windows(&t, 10).unwrap().len(), 19);
        assert_eq!(make_windows(&t, 30).unwrap().len(), 5);
        assert_eq!(make_windows(&t, 20).unwrap().len(), 9);
    }

    #[test]
    fn consecutive_windows_overlap_by_half() {
        let values: Vec<f64> = (0..40).map(f64::from).collect();
        let t = trial_with_channel(&values, None);
        let ws = make_windows(&t, 10).unwrap();
        for pair in ws.windows(2) {
            assert_eq!(pair[1].start - pair[0].start, 5);
            // second half of the first window equals first half of the second
            for i in 0..5 {
                for c in 0..NUM_CHANNELS {
                    assert_eq!(pair[0].channel(5 + i, c), pair[1].channel(i, c));
                }
            }
        }
    }

    #[test]
    fn window_label_is_last_sample() {
        use GaitLabel::{Sp, Sw};
        let mut labels = vec![Sw; 20];
        // boundary inside the first window, last sample SP
        for l in labels.iter_mut().take(10).skip(7) {
            *l = Sp;
        }
        let t = trial_with_channel(&vec![0.0; 20], Some(&labels));
        let ws = make_windows(&t, 10).unwrap();
        assert_eq!(ws[0].label, Sp);
    }

    #[test]
    fn bad_window_size_rejected() {
        let t = trial_with_channel(&vec![0.0; 100], None);
        assert!(matches!(
            make_windows(&t, 15),
            Err(DataError::BadWindowSize(15))
        ));
    }

    #[test]
    fn smooth_trial_leaves_gyro_untouched() {
        let values: Vec<f64> = (0..30).map(|i| f64::from(i % 5)).collect();
        let t = trial_with_channel(&values, None);
        let s = smooth_trial(&t).unwrap();
        for (orig, sm) in t.samples.iter().zip(&s.samples) {
            for c in 3..6 {
                assert_eq!(orig.channels[c], sm.channels[c]);
            }
        }
        // accel channels are smoothed
        assert!(t
            .samples
            .iter()
            .zip(&s.samples)
            .any(|(a, b)| a.channels[0] != b.channels[0]));
    }
}
