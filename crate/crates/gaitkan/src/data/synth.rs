//! Synthetic multi-subject IMU gait generator.
//!
//! Signals are phase-locked sinusoid mixtures at the subject's cadence with
//! class-specific signatures: a transverse-gyro half-sine burst during the
//! pre-turn swing (SP) and a transverse-gyro plateau during the turn-apex
//! stance (ST). Segment lengths are solved from the profile's class
//! proportion targets, so generated datasets land inside the published
//! class-balance envelope (SW 69-76 %, ST 15-21 %, SP 8-11 %).
//!
//! The waveforms are calibration knobs, not claims about human gait; what
//! matters downstream is the class balance and that the classes are
//! learnable with a controllable `separation`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Activity, DataError, GaitLabel, LabeledSample, Stiffness, Trial, NUM_CHANNELS};

/// Generator profile for one synthetic subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub id: String,
    /// Stride frequency of the base oscillation (Hz).
    pub cadence_hz: f64,
    /// Per-channel base amplitudes: accel x/y/z then gyro x/y/z.
    pub amp: [f64; NUM_CHANNELS],
    /// Additive white-noise standard deviation.
    pub noise_sigma: f64,
    /// Turning trials per (turn type, stiffness) cell.
    pub trials_per_cell: u32,
    /// Straight-walking trials (>= 4 so the split keeps one in training).
    pub straight_trials: u32,
    /// Scales the SP/ST signatures away from the SW baseline; larger means
    /// more separable classes.
    pub separation: f64,
    /// Target class proportions (SW, ST, SP) over all generated samples.
    pub proportions: [f64; 3],
    /// Samples per turning trial.
    pub turn_trial_len: usize,
    /// Samples per straight trial.
    pub straight_trial_len: usize,
    /// Samples per L-Test trial (embeds one 180-degree turn).
    pub ltest_trial_len: usize,
}

impl Default for SubjectProfile {
    fn default() -> Self {
        Self {
            id: "A01".into(),
            cadence_hz: 0.95,
            amp: [1.2, 0.9, 1.5, 0.5, 0.4, 0.35],
            noise_sigma: 0.25,
            trials_per_cell: 2,
            straight_trials: 6,
            separation: 1.0,
            proportions: [0.735, 0.168, 0.097],
            turn_trial_len: 380,
            straight_trial_len: 400,
            ltest_trial_len: 520,
        }
    }
}

/// Five default profiles spanning the published per-subject class balances.
pub fn default_profiles() -> Vec<SubjectProfile> {
    let base = SubjectProfile::default();
    let rows: [(&str, f64, [f64; 3]); 5] = [
        ("A01", 0.95, [0.735, 0.168, 0.097]),
        ("A02", 0.90, [0.730, 0.172, 0.098]),
        ("A03", 1.00, [0.727, 0.176, 0.097]),
        ("A04", 0.92, [0.724, 0.179, 0.097]),
        ("A05", 0.88, [0.720, 0.182, 0.098]),
    ];
    rows.iter()
        .enumerate()
        .map(|(i, &(id, cadence, proportions))| SubjectProfile {
            id: id.into(),
            cadence_hz: cadence,
            amp: [
                1.2 + 0.1 * i as f64,
                0.9,
                1.5 - 0.05 * i as f64,
                0.5,
                0.4 + 0.03 * i as f64,
                0.35,
            ],
            proportions,
            ..base.clone()
        })
        .collect()
}

fn fnv64(s: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

struct SegmentPlan {
    sp_len: usize,
    st_len: usize,
}

/// Solves per-turn segment lengths from the proportion targets and checks
/// they leave room for windowing and a plausible trial layout.
fn plan_segments(profile: &SubjectProfile) -> Result<SegmentPlan, DataError> {
    let err = |msg: String| DataError::InfeasibleProfile {
        profile: profile.id.clone(),
        msg,
    };
    let p = profile.proportions;
    if p.iter().any(|&v| v <= 0.0) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(err(format!(
            "proportions {p:?} must be positive and sum to 1"
        )));
    }
    if profile.straight_trials < 4 {
        return Err(err(format!(
            "need >= 4 straight trials, got {}",
            profile.straight_trials
        )));
    }
    if profile.trials_per_cell < 1 {
        return Err(err("need >= 1 trial per (turn, stiffness) cell".into()));
    }
    let n_turning = 9 * profile.trials_per_cell as usize;
    let n_ltest = 3usize;
    let total = n_turning * profile.turn_trial_len
        + n_ltest * profile.ltest_trial_len
        + profile.straight_trials as usize * profile.straight_trial_len;
    let n_events = n_turning + n_ltest;
    let st_len = (p[1] * total as f64 / n_events as f64).round() as usize;
    let sp_len = (p[2] * total as f64 / n_events as f64).round() as usize;
    const MIN_SEGMENT: usize = 36; // one full 300 ms window budget
    if sp_len < MIN_SEGMENT || st_len < MIN_SEGMENT {
        return Err(err(format!(
            "targets imply SP={sp_len}/ST={st_len} samples per turn; need >= {MIN_SEGMENT}"
        )));
    }
    let rest = profile.turn_trial_len as isize - (sp_len + st_len) as isize;
    if rest < 80 {
        return Err(err(format!(
            "turn trials of {} samples leave only {rest} SW samples around SP+ST",
            profile.turn_trial_len
        )));
    }
    Ok(SegmentPlan { sp_len, st_len })
}

fn turn_magnitude(activity: Activity) -> f64 {
    match activity {
        Activity::Spin90 => 1.4,
        Activity::Step90 => 1.0,
        Activity::Pivot180 | Activity::LTest => 2.0,
        Activity::Straight => 0.0,
    }
}

fn stiffness_factor(stiffness: Stiffness) -> f64 {
    match stiffness {
        Stiffness::Compliant => 1.1,
        Stiffness::Intermediate => 1.0,
        Stiffness::Stiff => 0.88,
    }
}

/// Smooth rise/hold/fall plateau over progress in [0, 1].
fn plateau(progress: f64) -> f64 {
    let ramp = 0.15;
    if progress < ramp {
        let t = progress / ramp;
        t * t * (3.0 - 2.0 * t)
    } else if progress > 1.0 - ramp {
        let t = (1.0 - progress) / ramp;
        t * t * (3.0 - 2.0 * t)
    } else {
        1.0
    }
}

const PHASES: [f64; NUM_CHANNELS] = [0.0, 1.1, 2.2, 3.3, 4.4, 5.5];

fn jitter(rng: &mut ChaCha8Rng, value: usize, frac: f64) -> usize {
    let f = 1.0 + rng.random_range(-frac..frac);
    ((value as f64 * f).round() as usize).max(1)
}

fn synth_trial(
    profile: &SubjectProfile,
    plan: &SegmentPlan,
    activity: Activity,
    stiffness: Stiffness,
    trial_index: u32,
    rng: &mut ChaCha8Rng,
) -> Trial {
    let total_len = match activity {
        Activity::Straight => profile.straight_trial_len,
        Activity::LTest => profile.ltest_trial_len,
        _ => profile.turn_trial_len,
    };
    // label layout
    let labels: Vec<GaitLabel> = if activity == Activity::Straight {
        vec![GaitLabel::Sw; total_len]
    } else {
        let sp = jitter(rng, plan.sp_len, 0.04);
        let st = jitter(rng, plan.st_len, 0.04);
        let rest = total_len - sp - st;
        let lead = (rest as f64 * rng.random_range(0.48..0.58)).round() as usize;
        let out = rest - lead;
        let mut l = Vec::with_capacity(total_len);
        l.extend(std::iter::repeat_n(GaitLabel::Sw, lead));
        l.extend(std::iter::repeat_n(GaitLabel::Sp, sp));
        l.extend(std::iter::repeat_n(GaitLabel::St, st));
        l.extend(std::iter::repeat_n(GaitLabel::Sw, out));
        l
    };

    // segment progress lookup for SP/ST envelopes
    let mut seg_start = vec![0usize; total_len];
    let mut seg_len = vec![1usize; total_len];
    {
        let mut i = 0;
        while i < total_len {
            let mut j = i;
            while j + 1 < total_len && labels[j + 1] == labels[i] {
                j += 1;
            }
            for k in i..=j {
                seg_start[k] = i;
                seg_len[k] = j - i + 1;
            }
            i = j + 1;
        }
    }

    let omega = 2.0 * std::f64::consts::PI * profile.cadence_hz / super::SAMPLE_RATE_HZ;
    let mag = turn_magnitude(activity) * stiffness_factor(stiffness) * profile.separation;
    let phase_offset: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut samples = Vec::with_capacity(total_len);
    for (t, &label) in labels.iter().enumerate() {
        let tf = t as f64;
        let mut ch = [0.0f64; NUM_CHANNELS];
        for (c, slot) in ch.iter_mut().enumerate() {
            let base = profile.amp[c]
                * ((omega * tf + PHASES[c] + phase_offset).sin()
                    + 0.3 * (2.0 * omega * tf + 1.7 * PHASES[c] + phase_offset).sin());
            *slot = base;
        }
        ch[2] += 9.8; // gravity offset on accel z
        let progress = (t - seg_start[t]) as f64 / seg_len[t] as f64;
        match label {
            GaitLabel::Sw => {}
            GaitLabel::Sp => {
                // swing burst: elevated transverse gyro with a half-sine
                // envelope plus a faster accel oscillation
                let env = (std::f64::consts::PI * progress).sin();
                ch[5] += mag * 1.3 * env;
                ch[3] += mag * 0.35 * env;
                ch[0] += profile.separation * 0.5 * profile.amp[0] * (3.0 * omega * tf).sin();
            }
            GaitLabel::St => {
                // stance plateau: sustained transverse gyro, lateral load
                let env = plateau(progress);
                ch[5] += mag * 0.9 * env;
                ch[1] += mag * 0.4 * env;
                ch[4] -= mag * 0.25 * env;
            }
        }
        for slot in ch.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *slot += profile.noise_sigma * z;
        }
        samples.push(LabeledSample {
            tick: t as u64,
            channels: ch,
            label,
        });
    }
    Trial {
        subject: profile.id.clone(),
        activity,
        stiffness,
        trial_index,
        samples,
    }
}

/// Generates every trial for one subject. Deterministic in (profile, seed).
pub fn synth_subject(profile: &SubjectProfile, seed: u64) -> Result<Vec<Trial>, DataError> {
    let plan = plan_segments(profile)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv64(&profile.id));
    let mut trials = Vec::new();
    for turn in Activity::TURN_TYPES {
        for stiffness in Stiffness::ALL {
            for i in 0..profile.trials_per_cell {
                trials.push(synth_trial(profile, &plan, turn, stiffness, i, &mut rng));
            }
        }
    }
    for (i, stiffness) in Stiffness::ALL.into_iter().enumerate() {
        trials.push(synth_trial(
            profile,
            &plan,
            Activity::LTest,
            stiffness,
            i as u32,
            &mut rng,
        ));
    }
    for i in 0..profile.straight_trials {
        trials.push(synth_trial(
            profile,
            &plan,
            Activity::Straight,
            Stiffness::Intermediate,
            i,
            &mut rng,
        ));
    }
    for t in &trials {
        t.validate_grammar()?;
    }
    Ok(trials)
}

/// All subjects of a profile set, in profile order.
pub fn generate_dataset(profiles: &[SubjectProfile], seed: u64) -> Result<Vec<Trial>, DataError> {
    let mut out = Vec::new();
    for p in profiles {
        out.extend(synth_subject(p, seed)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{class_proportions, split_trials, windows_for_trials};
    use crate::tape::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn deterministic_given_profile_and_seed() {
        let mut profile = SubjectProfile::default();
        profile.noise_sigma = 0.0;
        let a = synth_subject(&profile, 7).unwrap();
        let b = synth_subject(&profile, 7).unwrap();
        assert_eq!(a, b);
        // and with noise the stream is still reproducible
        profile.noise_sigma = 0.3;
        let c = synth_subject(&profile, 7).unwrap();
        let d = synth_subject(&profile, 7).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn proportions_inside_published_envelope() {
        for profile in default_profiles() {
            let trials = synth_subject(&profile, 0).unwrap();
            let windows = windows_for_trials(&trials, 10).unwrap();
            let p = class_proportions(&windows);
            assert!(
                (0.69..=0.76).contains(&p[0]),
                "{}: SW {:.3}",
                profile.id,
                p[0]
            );
            assert!(
                (0.15..=0.21).contains(&p[1]),
                "{}: ST {:.3}",
                profile.id,
                p[1]
            );
            assert!(
                (0.08..=0.11).contains(&p[2]),
                "{}: SP {:.3}",
                profile.id,
                p[2]
            );
        }
    }

    #[test]
    fn train_test_proportions_within_three_points() {
        let profile = default_profiles().remove(0);
        let trials = synth_subject(&profile, 0).unwrap();
        let split = split_trials(&trials, 0).unwrap();
        let ptrain = class_proportions(&windows_for_trials(&split.train, 10).unwrap());
        let ptest = class_proportions(&windows_for_trials(&split.test, 10).unwrap());
        for k in 0..3 {
            assert!(
                (ptrain[k] - ptest[k]).abs() <= 0.03,
                "class {k}: train {:.3} vs test {:.3}",
                ptrain[k],
                ptest[k]
            );
        }
    }

    #[test]
    fn infeasible_proportions_rejected() {
        let profile = SubjectProfile {
            proportions: [0.98, 0.01, 0.01],
            ..SubjectProfile::default()
        };
        assert!(matches!(
            synth_subject(&profile, 0),
            Err(DataError::InfeasibleProfile { .. })
        ));
        let profile = SubjectProfile {
            proportions: [0.2, 0.4, 0.4],
            ..SubjectProfile::default()
        };
        // SP+ST would not fit in the trial
        assert!(synth_subject(&profile, 0).is_err());
    }

    /// Trains a linear softmax probe with the tensor engine and returns
    /// training accuracy. The probe sees per-channel summary features
    /// (mean and standard deviation over the window), so with ~100 windows
    /// it cannot memorize and accuracy tracks the class separation.
    fn linear_probe_accuracy(windows: &[crate::data::Window]) -> f64 {
        let n = windows.len();
        let nc = crate::data::NUM_CHANNELS;
        let d = 2 * nc;
        let features: Vec<f64> = windows
            .iter()
            .flat_map(|w| {
                let mut f = vec![0.0; d];
                for c in 0..nc {
                    let vals: Vec<f64> = (0..w.width).map(|t| w.channel(t, c)).collect();
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                        / vals.len() as f64;
                    f[c] = mean;
                    f[nc + c] = var.sqrt();
                }
                f
            })
            .collect();
        let x = Tensor::from_vec(vec![n, d], features).unwrap();
        let labels: Vec<usize> = windows.iter().map(|w| w.label.index()).collect();
        let mut params = vec![
            crate::optim::Parameter::new(Tensor::zeros(&[d, 3])),
            crate::optim::Parameter::new(Tensor::zeros(&[3])),
        ];
        let mut adam = crate::optim::Adam::new(0.05);
        for _ in 0..200 {
            let mut tape = Tape::new();
            let xi = tape.constant(x.clone());
            let wi = tape.leaf(params[0].value.clone());
            let bi = tape.leaf(params[1].value.clone());
            let h = tape.matmul(xi, wi).unwrap();
            let logits = tape.add_bias(h, bi).unwrap();
            let loss = tape
                .weighted_cross_entropy(logits, &labels, &[1.0, 1.0, 1.0])
                .unwrap();
            let grads = tape.backward(loss).unwrap();
            params[0].grad = grads.wrt(wi).unwrap().clone();
            params[1].grad = grads.wrt(bi).unwrap().clone();
            adam.step(&mut params).unwrap();
        }
        // accuracy of the trained probe
        let mut tape = Tape::new();
        let xi = tape.constant(x);
        let wi = tape.constant(params[0].value.clone());
        let bi = tape.constant(params[1].value.clone());
        let h = tape.matmul(xi, wi).unwrap();
        let logits = tape.add_bias(h, bi).unwrap();
        let out = tape.value(logits).data();
        let mut correct = 0usize;
        for (s, &y) in labels.iter().enumerate() {
            let row = &out[s * 3..(s + 1) * 3];
            let pred = (0..3)
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            correct += usize::from(pred == y);
        }
        correct as f64 / n as f64
    }

    #[test]
    fn separation_monotonically_improves_linear_probe() {
        let mut accs = Vec::new();
        for separation in [0.05, 0.4, 1.5] {
            let profile = SubjectProfile {
                separation,
                noise_sigma: 0.9,
                ..SubjectProfile::default()
            };
            let trials = synth_subject(&profile, 11).unwrap();
            let mut windows = windows_for_trials(&trials, 10).unwrap();
            // deterministic subsample of 100 windows spread over the set
            let stride = windows.len() / 100;
            windows = windows
                .into_iter()
                .step_by(stride.max(1))
                .take(100)
                .collect();
            accs.push(linear_probe_accuracy(&windows));
        }
        assert!(
            accs[0] < accs[1] && accs[1] < accs[2],
            "accuracies not monotone: {accs:?}"
        );
    }
}
