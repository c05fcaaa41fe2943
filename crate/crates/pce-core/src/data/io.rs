use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AoiId, CaptionSpan, DataError, Dataset, Fixation, FixationSequence, PceLabel, PceSample, Region, Stimulus};
use crate::evaluation::EvalReport;

pub const FIXATIONS_FILE: &str = "fixations.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const STIMULI_FILE: &str = "stimuli.json";

const FIXATION_COLUMNS: [&str; 7] = ["participant_id", "stimulus_id", "index", "aoi", "x", "y", "duration_ms"];
const LABEL_COLUMNS: [&str; 3] = ["participant_id", "stimulus_id", "label"];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn file_name(path: &Path) -> String {
    path.display().to_string()
}

/// Reads a headed CSV file and returns each record as a column-name map together with its line.
fn read_csv(path: &Path, columns: &[&str]) -> Result<Vec<(u64, HashMap<String, String>)>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| DataError::File {
        file: file_name(path),
        message: e.to_string(),
    })?;
    let headers: Vec<String> = headers.iter().map(|h| h.to_string()).collect();
    for c in columns {
        if !headers.iter().any(|h| h == c) {
            return Err(DataError::File {
                file: file_name(path),
                message: format!("missing header column `{c}`"),
            });
        }
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| DataError::Row {
            file: file_name(path),
            line: e.position().map_or(0, |p| p.line()),
            column: String::new(),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let map = headers.iter().cloned().zip(rec.iter().map(str::to_string)).collect();
        rows.push((line, map));
    }
    Ok(rows)
}

fn field<'r>(path: &Path, line: u64, row: &'r HashMap<String, String>, col: &str) -> Result<&'r str, DataError> {
    row.get(col).map(String::as_str).ok_or_else(|| DataError::Row {
        file: file_name(path),
        line,
        column: col.to_string(),
        message: "missing field".into(),
    })
}

fn number<T: std::str::FromStr>(path: &Path, line: u64, row: &HashMap<String, String>, col: &str) -> Result<T, DataError> {
    let raw = field(path, line, row, col)?;
    raw.parse().map_err(|_| DataError::Row {
        file: file_name(path),
        line,
        column: col.to_string(),
        message: format!("cannot parse `{raw}` as a number"),
    })
}

#[derive(Serialize, Deserialize)]
struct StimulusRecord {
    stimulus_id: String,
    caption: String,
    image_w: f64,
    image_h: f64,
    regions: Vec<RegionRecord>,
    caption_spans: Vec<SpanRecord>,
}

#[derive(Serialize, Deserialize)]
struct RegionRecord {
    aoi: String,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

#[derive(Serialize, Deserialize)]
struct SpanRecord {
    aoi: String,
    start: usize,
    end: usize,
}

fn stimulus_aoi(path: &Path, raw: &str) -> Result<AoiId, DataError> {
    let aoi = AoiId::normalize(raw);
    if aoi.is_off() {
        return Err(DataError::File {
            file: file_name(path),
            message: format!("stimulus AOI `{raw}` is not a vis/txt symbol"),
        });
    }
    Ok(aoi)
}

fn load_stimuli(path: &Path) -> Result<BTreeMap<String, Stimulus>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let records: Vec<StimulusRecord> = serde_json::from_str(&text).map_err(|e| DataError::Row {
        file: file_name(path),
        line: e.line() as u64,
        column: format!("char {}", e.column()),
        message: e.to_string(),
    })?;
    let mut out = BTreeMap::new();
    for r in records {
        let regions = r
            .regions
            .iter()
            .map(|g| {
                Ok(Region {
                    aoi: stimulus_aoi(path, &g.aoi)?,
                    x: g.x,
                    y: g.y,
                    w: g.w,
                    h: g.h,
                })
            })
            .collect::<Result<Vec<_>, DataError>>()?;
        let caption_spans = r
            .caption_spans
            .iter()
            .map(|s| {
                Ok(CaptionSpan {
                    aoi: stimulus_aoi(path, &s.aoi)?,
                    start: s.start,
                    end: s.end,
                })
            })
            .collect::<Result<Vec<_>, DataError>>()?;
        let st = Stimulus {
            stimulus_id: r.stimulus_id.clone(),
            caption: r.caption,
            image_w: r.image_w,
            image_h: r.image_h,
            regions,
            caption_spans,
        };
        st.validate()?;
        if out.insert(r.stimulus_id.clone(), st).is_some() {
            return Err(DataError::File {
                file: file_name(path),
                message: format!("duplicate stimulus id {}", r.stimulus_id),
            });
        }
    }
    Ok(out)
}

/// Loads the three dataset files. Samples and vocabularies follow fixation-file order.
pub fn load_dataset(fixations_path: &Path, labels_path: &Path, stimuli_path: &Path) -> Result<Dataset, DataError> {
    let stimuli = load_stimuli(stimuli_path)?;

    let mut labels: HashMap<(String, String), PceLabel> = HashMap::new();
    let mut label_order = Vec::new();
    for (line, row) in read_csv(labels_path, &LABEL_COLUMNS)? {
        let p = field(labels_path, line, &row, "participant_id")?.to_string();
        let s = field(labels_path, line, &row, "stimulus_id")?.to_string();
        let raw = field(labels_path, line, &row, "label")?;
        let label = PceLabel::parse(raw).ok_or_else(|| DataError::Row {
            file: file_name(labels_path),
            line,
            column: "label".into(),
            message: format!("`{raw}` is not one of yes/no/unclear"),
        })?;
        if labels.insert((p.clone(), s.clone()), label).is_some() {
            return Err(DataError::DuplicatePair {
                participant: p,
                stimulus: s,
            });
        }
        label_order.push((p, s));
    }

    // group consecutive rows per (participant, stimulus); a pair that reappears after
    // its block closed is a duplicate
    let mut groups: Vec<((String, String), Vec<Fixation>)> = Vec::new();
    let mut closed: HashMap<(String, String), ()> = HashMap::new();
    for (line, row) in read_csv(fixations_path, &FIXATION_COLUMNS)? {
        let p = field(fixations_path, line, &row, "participant_id")?.to_string();
        let s = field(fixations_path, line, &row, "stimulus_id")?.to_string();
        let index: u32 = number(fixations_path, line, &row, "index")?;
        let fix = Fixation {
            index,
            aoi: AoiId::normalize(field(fixations_path, line, &row, "aoi")?),
            x: number(fixations_path, line, &row, "x")?,
            y: number(fixations_path, line, &row, "y")?,
            duration_ms: number(fixations_path, line, &row, "duration_ms")?,
        };
        let bad = |column: &str, message: String| DataError::Row {
            file: file_name(fixations_path),
            line,
            column: column.into(),
            message,
        };
        if !(fix.duration_ms > 0.0) {
            return Err(bad("duration_ms", "duration must be positive".into()));
        }
        if !(fix.x >= 0.0 && fix.y >= 0.0) {
            return Err(bad("x", "coordinates must be non-negative".into()));
        }
        let key = (p, s);
        match groups.last_mut() {
            Some((k, fs)) if *k == key => {
                if index as usize != fs.len() + 1 {
                    return Err(bad("index", format!("expected index {}, found {index}", fs.len() + 1)));
                }
                fs.push(fix);
            }
            _ => {
                if closed.contains_key(&key) {
                    return Err(DataError::DuplicatePair {
                        participant: key.0,
                        stimulus: key.1,
                    });
                }
                if index != 1 {
                    return Err(bad("index", format!("sequence must start at index 1, found {index}")));
                }
                if let Some((k, _)) = groups.last() {
                    closed.insert(k.clone(), ());
                }
                groups.push((key, vec![fix]));
            }
        }
    }
    if groups.is_empty() {
        return Err(DataError::NoSamples);
    }

    let unlabeled: Vec<String> = groups
        .iter()
        .filter(|(k, _)| !labels.contains_key(k))
        .map(|(k, _)| format!("{}/{}", k.0, k.1))
        .collect();
    if !unlabeled.is_empty() {
        return Err(DataError::MissingLabels(unlabeled));
    }
    let with_fix: HashMap<&(String, String), ()> = groups.iter().map(|(k, _)| (k, ())).collect();
    let orphan: Vec<String> = label_order
        .iter()
        .filter(|k| !with_fix.contains_key(k))
        .map(|k| format!("{}/{}", k.0, k.1))
        .collect();
    if !orphan.is_empty() {
        return Err(DataError::MissingFixations(orphan));
    }

    let mut samples = Vec::with_capacity(groups.len());
    for ((p, s), fixations) in groups {
        let label = labels[&(p.clone(), s.clone())];
        samples.push(PceSample::new(FixationSequence::new(&p, &s, fixations)?, label));
    }
    Dataset::new(samples, stimuli)
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

/// Writes `fixations.csv`, `labels.csv` and `stimuli.json` into `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv_err = |path: &Path| {
        let file = file_name(path);
        move |e: csv::Error| DataError::File {
            file: file.clone(),
            message: e.to_string(),
        }
    };

    let fpath = dir.join(FIXATIONS_FILE);
    let mut w = csv::Writer::from_path(&fpath).map_err(csv_err(&fpath))?;
    w.write_record(FIXATION_COLUMNS).map_err(csv_err(&fpath))?;
    for s in ds.samples() {
        for f in s.sequence.fixations() {
            w.write_record([
                s.participant_id.as_str(),
                s.stimulus_id.as_str(),
                &f.index.to_string(),
                f.aoi.as_str(),
                &fmt_num(f.x),
                &fmt_num(f.y),
                &format!("{:.2}", f.duration_ms),
            ])
            .map_err(csv_err(&fpath))?;
        }
    }
    w.flush().map_err(io_err(&fpath))?;

    let lpath = dir.join(LABELS_FILE);
    let mut w = csv::Writer::from_path(&lpath).map_err(csv_err(&lpath))?;
    w.write_record(LABEL_COLUMNS).map_err(csv_err(&lpath))?;
    for s in ds.samples() {
        w.write_record([s.participant_id.as_str(), s.stimulus_id.as_str(), s.label.as_str()])
            .map_err(csv_err(&lpath))?;
    }
    w.flush().map_err(io_err(&lpath))?;

    let records: Vec<StimulusRecord> = ds
        .stimuli()
        .values()
        .map(|st| StimulusRecord {
            stimulus_id: st.stimulus_id.clone(),
            caption: st.caption.clone(),
            image_w: st.image_w,
            image_h: st.image_h,
            regions: st
                .regions
                .iter()
                .map(|r| RegionRecord {
                    aoi: r.aoi.to_string(),
                    x: r.x,
                    y: r.y,
                    w: r.w,
                    h: r.h,
                })
                .collect(),
            caption_spans: st
                .caption_spans
                .iter()
                .map(|s| SpanRecord {
                    aoi: s.aoi.to_string(),
                    start: s.start,
                    end: s.end,
                })
                .collect(),
        })
        .collect();
    let spath = dir.join(STIMULI_FILE);
    let json = serde_json::to_string_pretty(&records).map_err(|e| DataError::File {
        file: file_name(&spath),
        message: e.to_string(),
    })?;
    fs::write(&spath, json + "\n").map_err(io_err(&spath))?;
    Ok(())
}

/// Writes an evaluation report as pretty JSON.
pub fn save_metrics(report: &EvalReport, path: &Path) -> Result<(), DataError> {
    let finite = report.accuracy.is_finite()
        && report.macro_f1.is_finite()
        && report
            .per_class
            .iter()
            .all(|c| c.precision.is_finite() && c.recall.is_finite() && c.f1.is_finite());
    if !finite {
        return Err(DataError::File {
            file: file_name(path),
            message: "report contains non-finite metrics".into(),
        });
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let json = serde_json::to_string_pretty(report).map_err(|e| DataError::File {
        file: file_name(path),
        message: e.to_string(),
    })?;
    fs::write(path, json + "\n").map_err(io_err(path))
}

pub fn load_metrics(path: &Path) -> Result<EvalReport, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| DataError::File {
        file: file_name(path),
        message: e.to_string(),
    })
}
