//! CSV formats: per-recording sensor files, the manifest, ratings and the G2 table.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    first_non_monotone, DataError, Domain, G2Label, Level, RawRecording, SamRating, Sex,
    SyntheticDataset, TimedSample,
};

/// One row of `manifest.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub file: String,
    pub participant_id: String,
    pub video_id: String,
    pub domain: String,
    pub channel: String,
    pub sample_rate_hz: f64,
}

fn parse_err(path: &Path, message: impl Into<String>) -> DataError {
    DataError::Parse {
        file: path.display().to_string(),
        message: message.into(),
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?)
}

fn check_header(path: &Path, rdr: &mut csv::Reader<File>, expected: &[&str]) -> Result<(), DataError> {
    let header = rdr.headers()?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(parse_err(
            path,
            format!("expected header {:?}, found {:?}", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

/// Reads a `timestamp_ms,value` sensor file.
pub fn read_recording_csv(path: &Path) -> Result<Vec<TimedSample>, DataError> {
    let mut rdr = open_reader(path)?;
    check_header(path, &mut rdr, &["timestamp_ms", "value"])?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).ok_or_else(|| parse_err(path, format!("row {}: short row", i + 1)));
        let timestamp_ms = field(0)?
            .parse::<i64>()
            .map_err(|e| parse_err(path, format!("row {}: timestamp: {e}", i + 1)))?;
        let value = field(1)?
            .parse::<f64>()
            .map_err(|e| parse_err(path, format!("row {}: value: {e}", i + 1)))?;
        out.push(TimedSample { timestamp_ms, value });
    }
    Ok(out)
}

pub fn write_recording_csv(path: &Path, rec: &RawRecording) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "timestamp_ms,value")?;
    for s in rec.samples() {
        writeln!(w, "{},{}", s.timestamp_ms, s.value)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, DataError> {
    let mut rdr = open_reader(path)?;
    check_header(
        path,
        &mut rdr,
        &["file", "participant_id", "video_id", "domain", "channel", "sample_rate_hz"],
    )?;
    rdr.deserialize().map(|r| r.map_err(DataError::from)).collect()
}

fn load_one(dir: &Path, row: &ManifestRow, manifest: &Path) -> Result<RawRecording, DataError> {
    let path = dir.join(&row.file);
    let domain: Domain = row.domain.parse().map_err(|e: String| parse_err(manifest, e))?;
    let samples = read_recording_csv(&path)?;
    if let Some(r) = first_non_monotone(&samples) {
        return Err(DataError::NonMonotoneTimestamps {
            file: row.file.clone(),
            row: r,
        });
    }
    let rec = RawRecording::new(
        row.participant_id.clone(),
        row.video_id.clone(),
        domain,
        row.channel.clone(),
        row.sample_rate_hz,
        samples,
    )?;
    if let Some(observed) = rec.mean_spacing_ms() {
        let declared = 1000.0 / row.sample_rate_hz;
        if ((observed - declared) / declared).abs() > 0.05 {
            return Err(DataError::RateMismatch {
                file: row.file.clone(),
                declared_hz: row.sample_rate_hz,
                observed_ms: observed,
            });
        }
    }
    Ok(rec)
}

/// Loads one [`RawRecording`] per manifest row, in manifest order.
pub fn load_recordings(dir: &Path, manifest: &Path) -> Result<Vec<RawRecording>, DataError> {
    let rows = read_manifest(manifest)?;
    rows.par_iter().map(|row| load_one(dir, row, manifest)).collect()
}

#[derive(Serialize, Deserialize)]
struct RatingRow {
    participant_id: String,
    video_id: String,
    valence: u8,
    arousal: u8,
    sex: String,
}

pub fn read_ratings(path: &Path) -> Result<Vec<SamRating>, DataError> {
    let mut rdr = open_reader(path)?;
    check_header(path, &mut rdr, &["participant_id", "video_id", "valence", "arousal", "sex"])?;
    rdr.deserialize::<RatingRow>()
        .map(|r| {
            let r = r?;
            let sex: Sex = r.sex.parse().map_err(|e: String| parse_err(path, e))?;
            for raw in [r.valence, r.arousal] {
                if !(1..=7).contains(&raw) {
                    return Err(DataError::RatingOutOfRange(raw));
                }
            }
            Ok(SamRating {
                participant_id: r.participant_id,
                video_id: r.video_id,
                valence_raw: r.valence,
                arousal_raw: r.arousal,
                sex,
            })
        })
        .collect()
}

pub fn write_ratings(path: &Path, ratings: &[SamRating]) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "participant_id,video_id,valence,arousal,sex")?;
    for r in ratings {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.participant_id, r.video_id, r.valence_raw, r.arousal_raw, r.sex
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_g2_table(path: &Path) -> Result<Vec<G2Label>, DataError> {
    let mut rdr = open_reader(path)?;
    check_header(path, &mut rdr, &["video_id", "g2_valence", "g2_arousal"])?;
    rdr.records()
        .map(|r| {
            let r = r?;
            let level = |k: usize| {
                r.get(k)
                    .and_then(Level::from_tag)
                    .ok_or_else(|| parse_err(path, format!("bad level in {:?}", r)))
            };
            Ok(G2Label {
                video_id: r.get(0).unwrap_or_default().to_string(),
                valence: level(1)?,
                arousal: level(2)?,
            })
        })
        .collect()
}

pub fn write_g2_table(path: &Path, table: &[G2Label]) -> Result<(), DataError> {
    use super::Dimension::{Arousal, Valence};
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "video_id,g2_valence,g2_arousal")?;
    for g in table {
        writeln!(w, "{},{},{}", g.video_id, g.valence.tag(Valence), g.arousal.tag(Arousal))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes sensor files, `manifest.csv`, `ratings.csv` and `g2.csv` into `dir`.
pub fn write_dataset(dir: &Path, data: &SyntheticDataset) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;
    let mut manifest = BufWriter::new(File::create(dir.join("manifest.csv"))?);
    writeln!(manifest, "file,participant_id,video_id,domain,channel,sample_rate_hz")?;
    for rec in &data.recordings {
        let file = format!("{}_{}_{}.csv", rec.participant_id, rec.video_id, rec.channel);
        write_recording_csv(&dir.join(&file), rec)?;
        writeln!(
            manifest,
            "{},{},{},{},{},{}",
            file, rec.participant_id, rec.video_id, rec.domain, rec.channel, rec.sample_rate_hz
        )?;
    }
    manifest.flush()?;
    write_ratings(&dir.join("ratings.csv"), &data.ratings)?;
    write_g2_table(&dir.join("g2.csv"), &data.g2)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(path: &Path, body: &str) {
        fs::write(path, body).unwrap();
    }

    fn manifest_line(file: &str, rate: f64) -> String {
        format!(
            "file,participant_id,video_id,domain,channel,sample_rate_hz\n{file},P1,V1,Peripheral,EDA,{rate}\n"
        )
    }

    #[test]
    fn loads_four_hz_eda_over_forty_seconds() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("timestamp_ms,value\n");
        for i in 0..160 {
            body.push_str(&format!("{},{}\n", i * 250, (i as f64 * 0.1).sin()));
        }
        write(&dir.path().join("eda.csv"), &body);
        write(&dir.path().join("m.csv"), &manifest_line("eda.csv", 4.0));
        let recs = load_recordings(dir.path(), &dir.path().join("m.csv")).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].len(), 160);
        assert_eq!(recs[0].domain, Domain::Peripheral);
    }

    #[test]
    fn backwards_timestamp_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let body = "timestamp_ms,value\n0,1\n250,1\n500,1\n750,1\n1000,1\n1250,1\n1100,1\n1500,1\n";
        write(&dir.path().join("eda.csv"), body);
        write(&dir.path().join("m.csv"), &manifest_line("eda.csv", 4.0));
        let err = load_recordings(dir.path(), &dir.path().join("m.csv")).unwrap_err();
        assert!(
            matches!(err, DataError::NonMonotoneTimestamps { row: 7, ref file } if file == "eda.csv"),
            "{err}"
        );
    }

    #[test]
    fn missing_file_and_rate_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write(&dir.path().join("m.csv"), &manifest_line("absent.csv", 4.0));
        assert!(matches!(
            load_recordings(dir.path(), &dir.path().join("m.csv")),
            Err(DataError::MissingFile(_))
        ));
        let body: String = std::iter::once("timestamp_ms,value\n".to_string())
            .chain((0..40).map(|i| format!("{},0\n", i * 200)))
            .collect();
        write(&dir.path().join("eda.csv"), &body);
        write(&dir.path().join("m.csv"), &manifest_line("eda.csv", 4.0));
        assert!(matches!(
            load_recordings(dir.path(), &dir.path().join("m.csv")),
            Err(DataError::RateMismatch { .. })
        ));
    }

    #[test]
    fn ratings_and_g2_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ratings = vec![
            SamRating {
                participant_id: "P01".into(),
                video_id: "V01".into(),
                valence_raw: 6,
                arousal_raw: 2,
                sex: Sex::Female,
            },
            SamRating {
                participant_id: "P02".into(),
                video_id: "V01".into(),
                valence_raw: 4,
                arousal_raw: 7,
                sex: Sex::Male,
            },
        ];
        let p = dir.path().join("r.csv");
        write_ratings(&p, &ratings).unwrap();
        assert_eq!(read_ratings(&p).unwrap(), ratings);
        let table = vec![G2Label {
            video_id: "V01".into(),
            valence: Level::High,
            arousal: Level::Low,
        }];
        let g = dir.path().join("g2.csv");
        write_g2_table(&g, &table).unwrap();
        assert_eq!(fs::read_to_string(&g).unwrap(), "video_id,g2_valence,g2_arousal\nV01,HV,LA\n");
        assert_eq!(read_g2_table(&g).unwrap(), table);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(&dir.path().join("x.csv"), "time,value\n0,1\n");
        assert!(matches!(
            read_recording_csv(&dir.path().join("x.csv")),
            Err(DataError::Parse { .. })
        ));
    }
}
