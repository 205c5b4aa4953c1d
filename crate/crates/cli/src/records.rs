//! Trajectory record persistence.
//!
//! Samples go to `<stem>.samples.tsv` (tab-separated, one header line) or
//! `<stem>.samples.bin`; events always go to `<stem>.events.tsv`. Floating
//! point values are printed with Rust's shortest round-trip formatting, so
//! text records re-load bit-exactly.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! magic  b"SEDR" | version u8 = 1 | kind u8 = 1 (samples)
//! row:   length u32 = 44 | t f64 | E f64 | L f64 | eps f64 | r f64 | flags u32
//! ```
//!
//! Rows are length-prefixed so the format can grow columns without breaking
//! old readers.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use sed_core::integrator::{Event, Sample};

use crate::config::RecordFormat;

const BINARY_MAGIC: &[u8; 4] = b"SEDR";
const BINARY_VERSION: u8 = 1;
const KIND_SAMPLES: u8 = 1;
const SAMPLE_ROW_BYTES: u32 = 44;

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed record in {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
}

fn malformed(path: &Path, reason: impl Into<String>) -> RecordError {
    RecordError::Malformed { path: path.to_path_buf(), reason: reason.into() }
}

/// Byte-counting writer so checkpoints can pin exact file offsets.
struct CountingWriter<W: Write> {
    inner: W,
    bytes: u64,
}

impl<W: Write> CountingWriter<W> {
    fn new(inner: W, start: u64) -> Self {
        Self { inner, bytes: start }
    }
}

impl<W: Write> Write for CountingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.bytes += n as u64;
        Ok(n)
    }
    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

pub fn sample_path(dir: &Path, stem: &str, format: RecordFormat) -> PathBuf {
    match format {
        RecordFormat::Text => dir.join(format!("{stem}.samples.tsv")),
        RecordFormat::Binary => dir.join(format!("{stem}.samples.bin")),
    }
}

pub fn event_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.events.tsv"))
}

/// Streams one trajectory's samples and events to disk.
pub struct RecordWriter {
    format: RecordFormat,
    samples: CountingWriter<BufWriter<File>>,
    events: CountingWriter<BufWriter<File>>,
}

impl RecordWriter {
    /// Create fresh record files, writing the headers.
    pub fn create(dir: &Path, stem: &str, format: RecordFormat) -> Result<Self, RecordError> {
        let sfile = File::create(sample_path(dir, stem, format))?;
        let efile = File::create(event_path(dir, stem))?;
        let mut samples = CountingWriter::new(BufWriter::new(sfile), 0);
        let mut events = CountingWriter::new(BufWriter::new(efile), 0);
        match format {
            RecordFormat::Text => {
                writeln!(samples, "t\tE\tL\teps\tr\tflags")?;
            }
            RecordFormat::Binary => {
                samples.write_all(BINARY_MAGIC)?;
                samples.write_all(&[BINARY_VERSION, KIND_SAMPLES])?;
            }
        }
        writeln!(events, "t\tkind\tfields")?;
        Ok(Self { format, samples, events })
    }

    /// Reopen existing record files for appending, truncating them to the
    /// checkpointed offsets first.
    pub fn resume(
        dir: &Path,
        stem: &str,
        format: RecordFormat,
        samples_bytes: u64,
        events_bytes: u64,
    ) -> Result<Self, RecordError> {
        let truncate_open = |path: PathBuf, len: u64| -> io::Result<File> {
            let file = OpenOptions::new().read(true).write(true).open(path)?;
            file.set_len(len)?;
            let mut file = file;
            file.seek(SeekFrom::End(0))?;
            Ok(file)
        };
        let sfile = truncate_open(sample_path(dir, stem, format), samples_bytes)?;
        let efile = truncate_open(event_path(dir, stem), events_bytes)?;
        Ok(Self {
            format,
            samples: CountingWriter::new(BufWriter::new(sfile), samples_bytes),
            events: CountingWriter::new(BufWriter::new(efile), events_bytes),
        })
    }

    pub fn write_sample(&mut self, s: &Sample) -> Result<(), RecordError> {
        match self.format {
            RecordFormat::Text => {
                writeln!(
                    self.samples,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    s.t, s.energy, s.l, s.eps, s.radius, s.flags
                )?;
            }
            RecordFormat::Binary => {
                self.samples.write_all(&SAMPLE_ROW_BYTES.to_le_bytes())?;
                for v in [s.t, s.energy, s.l, s.eps, s.radius] {
                    self.samples.write_all(&v.to_le_bytes())?;
                }
                self.samples.write_all(&s.flags.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn write_event(&mut self, e: &Event) -> Result<(), RecordError> {
        let line = match e {
            Event::EnergyFloorPush { t, energy_before } => {
                format!("{t}\tpush\t{energy_before}")
            }
            Event::WindowSwitch { t, old, new } => {
                format!("{t}\tswitch\t{}\t{}\t{}\t{}", old.0, old.1, new.0, new.1)
            }
            Event::Ionisation { t, dwell_start } => format!("{t}\tionisation\t{dwell_start}"),
            Event::SingularityAbort { t, radius } => format!("{t}\tsingularity\t{radius}"),
            Event::NonFiniteAbort { t } => format!("{t}\tnonfinite"),
        };
        writeln!(self.events, "{line}")?;
        Ok(())
    }

    /// Flush both streams and report (samples, events) byte offsets.
    pub fn offsets(&mut self) -> Result<(u64, u64), RecordError> {
        self.samples.flush()?;
        self.events.flush()?;
        Ok((self.samples.bytes, self.events.bytes))
    }
}

/// Load a sample file, auto-detecting text vs binary.
pub fn read_samples(path: &Path) -> Result<Vec<Sample>, RecordError> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 4];
    let n = file.read(&mut magic)?;
    file.seek(SeekFrom::Start(0))?;
    if n == 4 && &magic == BINARY_MAGIC {
        read_samples_binary(path, file)
    } else {
        read_samples_text(path, file)
    }
}

fn read_samples_text(path: &Path, file: File) -> Result<Vec<Sample>, RecordError> {
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 || line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let mut next_f64 = |name: &str| -> Result<f64, RecordError> {
            parts
                .next()
                .ok_or_else(|| malformed(path, format!("line {}: missing {name}", i + 1)))?
                .parse::<f64>()
                .map_err(|e| malformed(path, format!("line {}: {name}: {e}", i + 1)))
        };
        let t = next_f64("t")?;
        let energy = next_f64("E")?;
        let l = next_f64("L")?;
        let eps = next_f64("eps")?;
        let radius = next_f64("r")?;
        let flags = parts
            .next()
            .ok_or_else(|| malformed(path, format!("line {}: missing flags", i + 1)))?
            .parse::<u32>()
            .map_err(|e| malformed(path, format!("line {}: flags: {e}", i + 1)))?;
        out.push(Sample { t, energy, l, eps, radius, flags });
    }
    Ok(out)
}

fn read_samples_binary(path: &Path, file: File) -> Result<Vec<Sample>, RecordError> {
    let mut reader = BufReader::new(file);
    let mut header = [0u8; 6];
    reader.read_exact(&mut header)?;
    if &header[..4] != BINARY_MAGIC || header[4] != BINARY_VERSION || header[5] != KIND_SAMPLES {
        return Err(malformed(path, "bad binary header"));
    }
    let mut out = Vec::new();
    loop {
        let mut len_bytes = [0u8; 4];
        match reader.read_exact(&mut len_bytes) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_le_bytes(len_bytes);
        if len < SAMPLE_ROW_BYTES {
            return Err(malformed(path, format!("row length {len} too short")));
        }
        let mut row = vec![0u8; len as usize];
        reader.read_exact(&mut row)?;
        let f = |k: usize| f64::from_le_bytes(row[k * 8..(k + 1) * 8].try_into().unwrap());
        out.push(Sample {
            t: f(0),
            energy: f(1),
            l: f(2),
            eps: f(3),
            radius: f(4),
            flags: u32::from_le_bytes(row[40..44].try_into().unwrap()),
        });
    }
    Ok(out)
}

/// Load an event file.
pub fn read_events(path: &Path) -> Result<Vec<Event>, RecordError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 || line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        let bad = |reason: &str| malformed(path, format!("line {}: {reason}", i + 1));
        if parts.len() < 2 {
            return Err(bad("too few fields"));
        }
        let t: f64 = parts[0].parse().map_err(|_| bad("bad time"))?;
        let event = match parts[1] {
            "push" => Event::EnergyFloorPush {
                t,
                energy_before: parts.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad("push"))?,
            },
            "switch" => {
                let num = |k: usize| -> Result<usize, RecordError> {
                    parts.get(k).and_then(|s| s.parse().ok()).ok_or_else(|| bad("switch"))
                };
                Event::WindowSwitch { t, old: (num(2)?, num(3)?), new: (num(4)?, num(5)?) }
            }
            "ionisation" => Event::Ionisation {
                t,
                dwell_start: parts.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad("ionisation"))?,
            },
            "singularity" => Event::SingularityAbort {
                t,
                radius: parts.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad("singularity"))?,
            },
            "nonfinite" => Event::NonFiniteAbort { t },
            other => return Err(bad(&format!("unknown event kind {other}"))),
        };
        out.push(event);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::TempDir;

    fn roundtrip(format: RecordFormat, samples: &[Sample]) -> Vec<Sample> {
        let dir = TempDir::new().unwrap();
        let mut w = RecordWriter::create(dir.path(), "t", format).unwrap();
        for s in samples {
            w.write_sample(s).unwrap();
        }
        w.offsets().unwrap();
        read_samples(&sample_path(dir.path(), "t", format)).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn samples_roundtrip_bit_exact(
            rows in proptest::collection::vec(
                (any::<f64>(), any::<f64>(), any::<f64>(), 0u32..8),
                0..40,
            )
        ) {
            let samples: Vec<Sample> = rows
                .iter()
                .enumerate()
                .filter(|(_, (a, b, c, _))| a.is_finite() && b.is_finite() && c.is_finite())
                .map(|(i, (a, b, c, flags))| Sample {
                    t: i as f64,
                    energy: *a,
                    l: *b,
                    eps: c.abs(),
                    radius: 1.0 + i as f64,
                    flags: *flags,
                })
                .collect();
            for format in [RecordFormat::Text, RecordFormat::Binary] {
                let loaded = roundtrip(format, &samples);
                prop_assert_eq!(&loaded, &samples);
            }
        }
    }

    #[test]
    fn events_roundtrip() {
        let dir = TempDir::new().unwrap();
        let events = vec![
            Event::EnergyFloorPush { t: 1.5, energy_before: -2.25 },
            Event::WindowSwitch { t: 3.75, old: (100, 200), new: (120, 240) },
            Event::Ionisation { t: 9.0, dwell_start: 2.0 },
            Event::SingularityAbort { t: 10.125, radius: 0.0009765625 },
            Event::NonFiniteAbort { t: 11.0 },
        ];
        let mut w = RecordWriter::create(dir.path(), "t", RecordFormat::Text).unwrap();
        for e in &events {
            w.write_event(e).unwrap();
        }
        w.offsets().unwrap();
        let loaded = read_events(&event_path(dir.path(), "t")).unwrap();
        assert_eq!(loaded, events);
    }

    #[test]
    fn resume_truncates_to_offset() {
        let dir = TempDir::new().unwrap();
        let s = |t: f64| Sample { t, energy: -0.5, l: 1.0, eps: 0.0, radius: 1.0, flags: 0 };
        let mut w = RecordWriter::create(dir.path(), "t", RecordFormat::Binary).unwrap();
        w.write_sample(&s(0.0)).unwrap();
        let (off_s, off_e) = w.offsets().unwrap();
        w.write_sample(&s(1.0)).unwrap();
        w.write_sample(&s(2.0)).unwrap();
        w.offsets().unwrap();
        drop(w);
        // Rewind to the offset and write a different continuation.
        let mut w =
            RecordWriter::resume(dir.path(), "t", RecordFormat::Binary, off_s, off_e).unwrap();
        w.write_sample(&s(10.0)).unwrap();
        w.offsets().unwrap();
        drop(w);
        let loaded = read_samples(&sample_path(dir.path(), "t", RecordFormat::Binary)).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[1].t, 10.0);
    }
}
