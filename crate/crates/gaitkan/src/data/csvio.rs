//! Strict CSV schema for trial exchange: one sample per row, comma-separated
//! UTF-8 with a mandatory header. Channel values are written with nine
//! decimal places, so a round trip reproduces every sample to 1e-9.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Activity, DataError, GaitLabel, LabeledSample, Stiffness, Trial, NUM_CHANNELS};

pub const CSV_HEADER: &str =
    "subject,activity,stiffness,trial,accel_x,accel_y,accel_z,gyro_x,gyro_y,gyro_z,label";

/// Writes trials to `path`; samples keep their in-trial order, so ticks are
/// reconstructible as row positions and are not serialized.
pub fn export_csv(trials: &[Trial], path: &Path) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    export_csv_to(trials, &mut w)
}

pub fn export_csv_to<W: Write>(trials: &[Trial], out: &mut W) -> Result<(), DataError> {
    writeln!(out, "{CSV_HEADER}")?;
    for t in trials {
        for s in &t.samples {
            write!(
                out,
                "{},{},{},{}",
                t.subject,
                t.activity.token(),
                t.stiffness.token(),
                t.trial_index
            )?;
            for c in s.channels {
                write!(out, ",{c:.9}")?;
            }
            writeln!(out, ",{}", s.label.token())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn ingest_csv(path: &Path) -> Result<Vec<Trial>, DataError> {
    let f = File::open(path)?;
    ingest_csv_from(BufReader::new(f))
}

/// Parses trials from a reader. Rows of one trial must be contiguous; any
/// malformed field is reported with its 1-based line number.
pub fn ingest_csv_from<R: Read>(reader: R) -> Result<Vec<Trial>, DataError> {
    let err = |line: usize, msg: String| DataError::Csv { line, msg };
    let mut lines = BufReader::new(reader).lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Err(err(1, "empty file, expected header".into())),
    };
    if header.trim_end() != CSV_HEADER {
        return Err(err(1, format!("bad header, expected `{CSV_HEADER}`")));
    }
    let mut trials: Vec<Trial> = Vec::new();
    let mut seen_keys: Vec<String> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 + NUM_CHANNELS + 1 {
            return Err(err(
                line_no,
                format!("expected {} fields, got {}", 4 + NUM_CHANNELS + 1, fields.len()),
            ));
        }
        let subject = fields[0].to_string();
        let activity = Activity::parse(fields[1])
            .ok_or_else(|| err(line_no, format!("unknown activity `{}`", fields[1])))?;
        let stiffness = Stiffness::parse(fields[2])
            .ok_or_else(|| err(line_no, format!("unknown stiffness `{}`", fields[2])))?;
        let trial_index: u32 = fields[3]
            .parse()
            .map_err(|_| err(line_no, format!("bad trial index `{}`", fields[3])))?;
        let mut channels = [0.0f64; NUM_CHANNELS];
        for (c, slot) in channels.iter_mut().enumerate() {
            *slot = fields[4 + c].parse().map_err(|_| {
                err(line_no, format!("bad channel value `{}`", fields[4 + c]))
            })?;
        }
        let label = GaitLabel::parse(fields[4 + NUM_CHANNELS]).ok_or_else(|| {
            err(
                line_no,
                format!("unknown label token `{}`", fields[4 + NUM_CHANNELS]),
            )
        })?;

        let key = format!("{subject}/{}/{}/{trial_index}", activity.token(), stiffness.token());
        let extend_current = trials
            .last()
            .is_some_and(|t: &Trial| t.key() == key);
        if extend_current {
            let t = trials.last_mut().expect("non-empty");
            let tick = t.samples.len() as u64;
            t.samples.push(LabeledSample {
                tick,
                channels,
                label,
            });
        } else {
            if seen_keys.contains(&key) {
                return Err(err(
                    line_no,
                    format!("rows of trial `{key}` are not contiguous"),
                ));
            }
            seen_keys.push(key);
            trials.push(Trial {
                subject,
                activity,
                stiffness,
                trial_index,
                samples: vec![LabeledSample {
                    tick: 0,
                    channels,
                    label,
                }],
            });
        }
    }
    Ok(trials)
}
