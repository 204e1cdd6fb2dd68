//! Per-movement arrival-rate time series.
//!
//! On disk a profile is a comma-separated table with one row per time bin:
//!
//! ```text
//! # bin_width_s=300
//! m1,m2,m3,m4,m5,m6,m7,m8
//! 93.5,82.5,44,55,93.5,82.5,44,55
//! ...
//! ```
//!
//! Rates are in vehicles per hour. The leading comment line is mandatory.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::movement::NUM_MOVEMENTS;
use super::ProfileError;

pub type MovementRates = [f64; NUM_MOVEMENTS];

#[derive(Clone, Debug, PartialEq)]
pub struct FlowProfile {
    bin_width: u32,
    rates: Vec<MovementRates>,
}

impl FlowProfile {
    pub fn new(bin_width: u32, rates: Vec<MovementRates>) -> Result<Self, ProfileError> {
        if bin_width == 0 {
            return Err(ProfileError::Invalid("bin width must be positive".into()));
        }
        if rates.is_empty() {
            return Err(ProfileError::Invalid("profile has no bins".into()));
        }
        for (bin, row) in rates.iter().enumerate() {
            if let Some(m) = row.iter().position(|r| !r.is_finite() || *r < 0.0) {
                return Err(ProfileError::NegativeRate {
                    bin,
                    movement: m + 1,
                    rate: row[m],
                });
            }
        }
        Ok(Self { bin_width, rates })
    }

    /// Constant rates held for `duration` seconds.
    pub fn constant(rates: MovementRates, bin_width: u32, duration: u32) -> Result<Self, ProfileError> {
        let bins = duration.div_ceil(bin_width.max(1)) as usize;
        Self::new(bin_width, vec![rates; bins.max(1)])
    }

    pub fn bin_width(&self) -> u32 {
        self.bin_width
    }

    pub fn bins(&self) -> &[MovementRates] {
        &self.rates
    }

    pub fn duration(&self) -> u32 {
        self.bin_width * self.rates.len() as u32
    }

    pub fn bin_index(&self, clock: u32) -> usize {
        ((clock / self.bin_width) as usize).min(self.rates.len() - 1)
    }

    pub fn rates_at(&self, clock: u32) -> &MovementRates {
        &self.rates[self.bin_index(clock)]
    }

    pub fn total_rate_at(&self, clock: u32) -> f64 {
        self.rates_at(clock).iter().sum()
    }

    /// Zeroes the rate of every movement flagged absent.
    pub fn masked(mut self, present: &[bool; NUM_MOVEMENTS]) -> Self {
        for row in &mut self.rates {
            for (rate, &keep) in row.iter_mut().zip(present) {
                if !keep {
                    *rate = 0.0;
                }
            }
        }
        self
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), ProfileError> {
        writeln!(out, "# bin_width_s={}", self.bin_width)?;
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record((1..=NUM_MOVEMENTS).map(|m| format!("m{m}")))?;
        for row in &self.rates {
            writer.write_record(row.iter().map(|r| r.to_string()))?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, ProfileError> {
        let mut reader = BufReader::new(input);
        let mut first = String::new();
        reader.read_line(&mut first)?;
        let bin_width = parse_bin_width(first.trim())?;

        let mut rows = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let headers = rows.headers()?.clone();
        if headers.len() != NUM_MOVEMENTS {
            return Err(ProfileError::Invalid(format!(
                "expected {NUM_MOVEMENTS} movement columns, found {}",
                headers.len()
            )));
        }
        let mut rates = Vec::new();
        for record in rows.records() {
            let record = record?;
            if record.len() != NUM_MOVEMENTS {
                return Err(ProfileError::Invalid(format!(
                    "row {} has {} columns",
                    rates.len() + 1,
                    record.len()
                )));
            }
            let mut row = [0.0; NUM_MOVEMENTS];
            for (slot, field) in row.iter_mut().zip(record.iter()) {
                *slot = field
                    .parse()
                    .map_err(|_| ProfileError::Invalid(format!("bad rate {field:?}")))?;
            }
            rates.push(row);
        }
        Self::new(bin_width, rates)
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), ProfileError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn parse_bin_width(line: &str) -> Result<u32, ProfileError> {
    line.strip_prefix('#')
        .map(str::trim)
        .and_then(|rest| rest.strip_prefix("bin_width_s="))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| ProfileError::Invalid(format!("missing `# bin_width_s=N` line, got {line:?}")))
}
