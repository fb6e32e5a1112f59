//! Trial data model: 120 Hz six-channel IMU streams with per-sample gait
//! labels, fixed-width overlapping windows, trial-level train/test splits,
//! stratified test divisions, a synthetic gait generator and CSV I/O.

mod csvio;
mod split;
mod synth;
mod window;

pub use csvio::{export_csv, export_csv_to, ingest_csv, ingest_csv_from, CSV_HEADER};
pub use split::{fold_checksum, split_trials, ten_divisions, validation_split, DataSplit};
pub use synth::{default_profiles, generate_dataset, synth_subject, SubjectProfile};
pub use window::{make_windows, moving_average, smooth_trial, windows_for_trials};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SAMPLE_RATE_HZ: f64 = 120.0;
pub const NUM_CHANNELS: usize = 6;
/// Window widths the protocol allows; all respect the 300 ms (36-sample)
/// prediction budget at 120 Hz.
pub const WINDOW_SIZES: [usize; 3] = [10, 20, 30];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("signal too short: length {got} < required {min}")]
    TooShort { got: usize, min: usize },
    #[error("moving average width must be odd and >= 1, got {0}")]
    BadFilterWidth(usize),
    #[error("window size {0} not one of {WINDOW_SIZES:?}")]
    BadWindowSize(usize),
    #[error("subject `{subject}` is missing a trial for cell ({turn}, {stiffness})")]
    MissingCell {
        subject: String,
        turn: &'static str,
        stiffness: &'static str,
    },
    #[error("subject `{subject}` has {got} straight trials, need >= {min}")]
    NotEnoughStraight {
        subject: String,
        got: usize,
        min: usize,
    },
    #[error("class {class} has only {got} test windows, need >= {min}")]
    ClassTooSmall {
        class: &'static str,
        got: usize,
        min: usize,
    },
    #[error("line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("label grammar violated in trial {trial}: {msg}")]
    Grammar { trial: String, msg: String },
    #[error("infeasible generator profile `{profile}`: {msg}")]
    InfeasibleProfile { profile: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The three gait classes, in the fixed label order (SW, ST, SP).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GaitLabel {
    /// Straight walking.
    Sw,
    /// Stance phase at the turn apex (heel strike to toe-off).
    St,
    /// Pre-turn swing phase (toe-off to heel strike at the turn apex).
    Sp,
}

impl GaitLabel {
    pub const ALL: [Self; 3] = [Self::Sw, Self::St, Self::Sp];

    pub fn index(self) -> usize {
        match self {
            Self::Sw => 0,
            Self::St => 1,
            Self::Sp => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    pub fn token(self) -> &'static str {
        match self {
            Self::Sw => "SW",
            Self::St => "ST",
            Self::Sp => "SP",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "SW" => Some(Self::Sw),
            "ST" => Some(Self::St),
            "SP" => Some(Self::Sp),
            _ => None,
        }
    }
}

/// Recorded activities. The turn types are the test-split cells; the L-Test
/// embeds a single 180-degree turn and only ever feeds the training side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activity {
    Straight,
    Spin90,
    Step90,
    Pivot180,
    LTest,
}

impl Activity {
    pub const TURN_TYPES: [Self; 3] = [Self::Spin90, Self::Step90, Self::Pivot180];

    pub fn token(self) -> &'static str {
        match self {
            Self::Straight => "straight",
            Self::Spin90 => "spin90",
            Self::Step90 => "step90",
            Self::Pivot180 => "pivot180",
            Self::LTest => "ltest",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "straight" => Some(Self::Straight),
            "spin90" => Some(Self::Spin90),
            "step90" => Some(Self::Step90),
            "pivot180" => Some(Self::Pivot180),
            "ltest" => Some(Self::LTest),
            _ => None,
        }
    }

    /// Whether the trial contains a turn event (and hence SP/ST segments).
    pub fn has_turn(self) -> bool {
        !matches!(self, Self::Straight)
    }
}

/// VSTA stiffness settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stiffness {
    /// 0.30 Nm/deg
    Compliant,
    /// 0.57 Nm/deg
    Intermediate,
    /// 0.91 Nm/deg
    Stiff,
}

impl Stiffness {
    pub const ALL: [Self; 3] = [Self::Compliant, Self::Intermediate, Self::Stiff];

    pub fn token(self) -> &'static str {
        match self {
            Self::Compliant => "compliant",
            Self::Intermediate => "intermediate",
            Self::Stiff => "stiff",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "compliant" => Some(Self::Compliant),
            "intermediate" => Some(Self::Intermediate),
            "stiff" => Some(Self::Stiff),
            _ => None,
        }
    }
}

/// One 120 Hz sample: accel x/y/z (m/s²) then gyro x/y/z (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub tick: u64,
    pub channels: [f64; NUM_CHANNELS],
    pub label: GaitLabel,
}

/// One recorded walking bout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub subject: String,
    pub activity: Activity,
    pub stiffness: Stiffness,
    pub trial_index: u32,
    pub samples: Vec<LabeledSample>,
}

impl Trial {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn key(&self) -> String {
        format!(
            "{}/{}/{}/{}",
            self.subject,
            self.activity.token(),
            self.stiffness.token(),
            self.trial_index
        )
    }

    /// Finite-state check of the label grammar.
    ///
    /// Straight trials carry only SW. Turning trials walk SW -> SP -> ST ->
    /// SW (self-loops allowed), must contain at least one SP segment, and
    /// every SP segment is immediately followed by an ST segment.
    pub fn validate_grammar(&self) -> Result<(), DataError> {
        let err = |msg: String| DataError::Grammar {
            trial: self.key(),
            msg,
        };
        if self.samples.is_empty() {
            return Err(err("empty trial".into()));
        }
        if self.activity == Activity::Straight {
            if let Some(s) = self.samples.iter().find(|s| s.label != GaitLabel::Sw) {
                return Err(err(format!(
                    "straight trial contains non-SW label at tick {}",
                    s.tick
                )));
            }
            return Ok(());
        }
        use GaitLabel::{Sp, St, Sw};
        if self.samples[0].label != Sw {
            return Err(err("turning trial must start in SW".into()));
        }
        let mut sp_segments = 0usize;
        for pair in self.samples.windows(2) {
            let (from, to) = (pair[0].label, pair[1].label);
            let ok = matches!(
                (from, to),
                (Sw, Sw) | (Sw, Sp) | (Sp, Sp) | (Sp, St) | (St, St) | (St, Sw)
            );
            if !ok {
                return Err(err(format!(
                    "forbidden transition {} -> {} at tick {}",
                    from.token(),
                    to.token(),
                    pair[1].tick
                )));
            }
            if from != Sp && to == Sp {
                sp_segments += 1;
            }
        }
        if sp_segments == 0 {
            return Err(err("turning trial has no SP segment".into()));
        }
        if self.samples.last().unwrap().label == Sp {
            return Err(err("SP segment not followed by ST".into()));
        }
        Ok(())
    }
}

/// A fixed-width model input: `width` consecutive samples of all six
/// channels, labeled by the window's final sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    /// Row-major `[width, 6]` data.
    pub data: Vec<f64>,
    pub width: usize,
    pub label: GaitLabel,
    pub trial: String,
    pub start: usize,
}

impl Window {
    pub fn channel(&self, t: usize, c: usize) -> f64 {
        self.data[t * NUM_CHANNELS + c]
    }
}

/// Per-class window counts in label order (SW, ST, SP).
pub fn class_counts(windows: &[Window]) -> [u64; 3] {
    let mut counts = [0u64; 3];
    for w in windows {
        counts[w.label.index()] += 1;
    }
    counts
}

/// Class proportions; zero total gives zeros.
pub fn class_proportions(windows: &[Window]) -> [f64; 3] {
    let counts = class_counts(windows);
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return [0.0; 3];
    }
    let mut out = [0.0; 3];
    for k in 0..3 {
        out[k] = counts[k] as f64 / total as f64;
    }
    out
}
