//! FER2013 CSV ingestion.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::{CLASS_NAMES, NUM_CLASSES};

/// Side length of every stored face image.
pub const IMAGE_SIDE: usize = 48;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Training,
    PublicTest,
    PrivateTest,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Training, Split::PublicTest, Split::PrivateTest];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Training => "Training",
            Split::PublicTest => "PublicTest",
            Split::PrivateTest => "PrivateTest",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown Usage `{s}` (expected Training, PublicTest or PrivateTest)"))
    }
}

/// One grayscale face: 2304 row-major pixels in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Vec<f32>,
    pub label: usize,
    pub split: Split,
}

/// Per-split, per-class sample counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetSummary {
    pub counts: [[usize; NUM_CLASSES]; 3],
}

impl DatasetSummary {
    pub fn from_samples(samples: &[Sample]) -> Self {
        let mut s = DatasetSummary::default();
        for x in samples {
            s.counts[x.split.index()][x.label] += 1;
        }
        s
    }

    pub fn split_total(&self, split: Split) -> usize {
        self.counts[split.index()].iter().sum()
    }

    pub fn class_total(&self, class: usize) -> usize {
        self.counts.iter().map(|row| row[class]).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }
}

impl fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<10}", "class")?;
        for s in Split::ALL {
            write!(f, " {:>11}", s.as_str())?;
        }
        writeln!(f, " {:>7}", "total")?;
        for (c, name) in CLASS_NAMES.iter().enumerate() {
            write!(f, "{name:<10}")?;
            for s in Split::ALL {
                write!(f, " {:>11}", self.counts[s.index()][c])?;
            }
            writeln!(f, " {:>7}", self.class_total(c))?;
        }
        write!(f, "{:<10}", "total")?;
        for s in Split::ALL {
            write!(f, " {:>11}", self.split_total(s))?;
        }
        write!(f, " {:>7}", self.total())
    }
}

pub fn parse_csv(path: impl AsRef<Path>) -> Result<(Vec<Sample>, DatasetSummary)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_reader(std::io::BufReader::new(file))
}

/// Parses `emotion,pixels,Usage` records. Row numbers in errors are file
/// line numbers, the header being line 1.
pub fn parse_reader<R: Read>(reader: R) -> Result<(Vec<Sample>, DatasetSummary)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::at_row(1, e.to_string()))?;
    let expected = ["emotion", "pixels", "Usage"];
    if headers.iter().map(str::trim).ne(expected) {
        return Err(Error::at_row(1, format!("expected header `emotion,pixels,Usage`, got `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut samples = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::at_row(line, e.to_string()))?;
        samples.push(parse_record(&record).map_err(|detail| Error::at_row(line, detail))?);
    }
    let summary = DatasetSummary::from_samples(&samples);
    Ok((samples, summary))
}

fn parse_record(r: &csv::StringRecord) -> std::result::Result<Sample, String> {
    if r.len() != 3 {
        return Err(format!("expected 3 fields, found {}", r.len()));
    }
    let label: usize = r[0].trim().parse().map_err(|_| format!("emotion `{}` is not an integer", &r[0]))?;
    if label >= NUM_CLASSES {
        return Err(format!("emotion {label} is outside 0..{}", NUM_CLASSES - 1));
    }
    let mut image = Vec::with_capacity(IMAGE_PIXELS);
    for tok in r[1].split_ascii_whitespace() {
        let v: u8 = tok.parse().map_err(|_| format!("pixel `{tok}` is not an integer in 0..255"))?;
        image.push(v as f32 / 255.0);
    }
    if image.len() != IMAGE_PIXELS {
        return Err(format!("expected {IMAGE_PIXELS} pixels, found {}", image.len()));
    }
    let split = r[2].trim().parse()?;
    Ok(Sample { image, label, split })
}
