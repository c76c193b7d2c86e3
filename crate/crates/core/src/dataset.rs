//! JSON-lines manifests of line images and the decoded-output format.
//!
//! A manifest line looks like
//! `{"id": "...", "input": "real_val/real_val-00003.png", "transcript": "fhjhl", "boxes": [[x0, y0, x1, y1], ...]}`.
//! `input` is relative to the manifest's directory; `.png` is a grayscale
//! raster, `.sig` a stored signature map and `.json` a pen trajectory that is
//! turned into a signature map on load. `boxes` is optional.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alphabet::Alphabet;
use crate::decode::Transcription;
use crate::error::{io_err, Error, Result};
use crate::geometry::{CharBox, Rect};
use crate::pathsig::{trajectory_to_map, SignatureMap};
use crate::preprocess::{Raster, Trajectory};
use crate::sample::{LineInput, TextLineSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub input: String,
    pub transcript: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<[f64; 4]>>,
}

/// One decoded line: the transcript plus `[x0, y0, x1, y1, class, score]` per
/// segmented character.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodedLine {
    pub id: String,
    pub transcript: String,
    pub boxes: Vec<[f64; 6]>,
}

impl DecodedLine {
    pub fn new(id: &str, t: &Transcription, alphabet: &Alphabet) -> Self {
        Self {
            id: id.to_string(),
            transcript: alphabet.decode(&t.rec),
            boxes: t
                .seg
                .iter()
                .map(|b| [b.rect.x_min, b.rect.y_min, b.rect.x_max, b.rect.y_max, b.class_id as f64, b.score])
                .collect(),
        }
    }

    /// Rebuilds the transcription. Source regions are not stored and come
    /// back empty.
    pub fn transcription(&self, alphabet: &Alphabet) -> Result<Transcription> {
        let seg = self
            .boxes
            .iter()
            .map(|b| {
                let class = b[4];
                if class < 0.0 || class.fract() != 0.0 || class as usize >= alphabet.len() {
                    return Err(Error::Data(format!("{}: bad class id {class} in decoded box", self.id)));
                }
                Ok(CharBox::new(Rect::new(b[0], b[1], b[2], b[3]), class as usize, b[5]))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Transcription {
            seg,
            rec: alphabet.encode(&self.transcript)?,
            regions: Vec::new(),
        })
    }
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&out).map_err(io_err(path))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    read_lines(path)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    write_lines(path, entries)
}

pub fn read_decoded(path: &Path) -> Result<Vec<DecodedLine>> {
    read_lines(path)
}

pub fn write_decoded(path: &Path, lines: &[DecodedLine]) -> Result<()> {
    write_lines(path, lines)
}

/// Loads an input file by extension. Rasters and maps must already have
/// `height` rows; trajectories are normalized to it.
pub fn load_input(path: &Path, height: usize) -> Result<LineInput> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let input = match ext {
        "png" => {
            if !path.exists() {
                return Err(Error::Data(format!("{}: no such image", path.display())));
            }
            LineInput::Raster(Raster::load_png(path)?)
        }
        "sig" => LineInput::Signature(SignatureMap::load(path)?),
        "json" => LineInput::Signature(trajectory_to_map(&Trajectory::load(path)?, height)?),
        other => {
            return Err(Error::Data(format!(
                "{}: unsupported input type {other:?} (expected png, sig or json)",
                path.display()
            )))
        }
    };
    if input.height() != Some(height) {
        return Err(Error::Data(format!(
            "{}: input height {:?} does not match the model height {height}",
            path.display(),
            input.height()
        )));
    }
    Ok(input)
}

/// Reads a manifest and every input it references.
pub fn load_samples(manifest: &Path, alphabet: &Alphabet, height: usize) -> Result<Vec<TextLineSample>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let input = load_input(&base.join(&e.input), height)?;
            let transcript = alphabet.encode(&e.transcript)?;
            if let Some(bs) = &e.boxes {
                if bs.len() != transcript.len() {
                    return Err(Error::Data(format!(
                        "{}: {} boxes for {} characters",
                        e.id,
                        bs.len(),
                        transcript.len()
                    )));
                }
            }
            let boxes = e.boxes.as_ref().map(|bs| {
                bs.iter()
                    .zip(&transcript)
                    .map(|(b, &c)| CharBox::new(Rect::new(b[0], b[1], b[2], b[3]), c, 1.0))
                    .collect()
            });
            TextLineSample::new(e.id.clone(), input, transcript, boxes)
                .map_err(|err| Error::Data(format!("{}: {err}", e.id)))
        })
        .collect()
}

/// Writes raster samples as PNGs under `dir/<name>/` and the manifest as
/// `dir/<name>.jsonl`, returning the manifest path.
pub fn write_split(dir: &Path, name: &str, samples: &[TextLineSample], alphabet: &Alphabet) -> Result<PathBuf> {
    let img_dir = dir.join(name);
    fs::create_dir_all(&img_dir).map_err(io_err(&img_dir))?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let file = match &s.input {
            LineInput::Raster(r) => {
                let file = format!("{}.png", s.id);
                r.save_png(&img_dir.join(&file))?;
                file
            }
            LineInput::Signature(m) => {
                let file = format!("{}.sig", s.id);
                m.save(&img_dir.join(&file))?;
                file
            }
            LineInput::Trajectory(t) => {
                let file = format!("{}.json", s.id);
                t.save(&img_dir.join(&file))?;
                file
            }
        };
        entries.push(ManifestEntry {
            id: s.id.clone(),
            input: format!("{name}/{file}"),
            transcript: alphabet.decode(&s.transcript),
            boxes: s
                .boxes
                .as_ref()
                .map(|bs| bs.iter().map(|b| [b.rect.x_min, b.rect.y_min, b.rect.x_max, b.rect.y_max]).collect()),
        });
    }
    let path = dir.join(format!("{name}.jsonl"));
    write_manifest(&path, &entries)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decoded_line_round_trips() {
        let a = Alphabet::latin(5).unwrap();
        let t = Transcription {
            seg: vec![CharBox::new(Rect::new(1.0, 2.0, 9.5, 30.0), 3, 0.75)],
            rec: vec![3, 1],
            regions: vec![0],
        };
        let d = DecodedLine::new("x", &t, &a);
        let back: DecodedLine = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        let t2 = back.transcription(&a).unwrap();
        assert_eq!(t2.seg, t.seg);
        assert_eq!(t2.rec, t.rec);
    }

    #[test]
    fn fractional_class_is_rejected() {
        let a = Alphabet::latin(5).unwrap();
        let d = DecodedLine {
            id: "x".into(),
            transcript: "a".into(),
            boxes: vec![[0.0, 0.0, 1.0, 1.0, 1.5, 1.0]],
        };
        assert!(d.transcription(&a).is_err());
    }
}
