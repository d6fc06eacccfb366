//! Versioned model checkpoints: a readable text header carrying the full
//! architecture and schedule, then the flat parameter vector as raw
//! little-endian f64 bytes guarded by a CRC-32.
//!
//! Block order inside the parameter payload (row-major weight matrices, then
//! bias): observation encoder (w1 b1 w2 b2), render encoder (same), object
//! encoder (same), time embedding (w b), fusion layers (w1 b1 w2 b2 w3 b3).

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::diffusion::NoiseSchedule;
use crate::sim::SensorConfig;

use super::{ArchConfig, EnergyError, EnergyModel};

pub(crate) const MAGIC: &str = "ebmpose-ckpt v1";
const KIND_ENERGY: &str = "energy";

/// CRC-32 (IEEE 802.3 polynomial, reflected), as used by zip/png.
pub(crate) fn crc32(data: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, entry) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 == 1 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *entry = c;
    }
    let mut crc = 0xFFFF_FFFF_u32;
    for &b in data {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}

pub(crate) fn write_arch<W: Write>(w: &mut W, arch: &ArchConfig) -> io::Result<()> {
    writeln!(w, "grid_h {}", arch.sensor.grid_h)?;
    writeln!(w, "grid_w {}", arch.sensor.grid_w)?;
    writeln!(w, "plate_half_gap {}", arch.sensor.plate_half_gap)?;
    writeln!(w, "pixel_pitch {}", arch.sensor.pixel_pitch)?;
    writeln!(w, "max_depth {}", arch.sensor.max_depth)?;
    writeln!(w, "workspace_half_extent {}", arch.workspace_half_extent)?;
    writeln!(w, "nominal_indentation {}", arch.nominal_indentation)?;
    writeln!(w, "enc_hidden {}", arch.enc_hidden)?;
    writeln!(w, "enc_feat {}", arch.enc_feat)?;
    writeln!(w, "obj_hidden {}", arch.obj_hidden)?;
    writeln!(w, "obj_feat {}", arch.obj_feat)?;
    writeln!(w, "obj_points {}", arch.obj_points)?;
    writeln!(w, "time_freqs {}", arch.time_freqs)?;
    writeln!(w, "time_feat {}", arch.time_feat)?;
    writeln!(w, "fusion_hidden {}", arch.fusion_hidden)?;
    Ok(())
}

pub(crate) fn write_params<W: Write>(w: &mut W, params: &[f64]) -> io::Result<()> {
    let mut bytes = Vec::with_capacity(params.len() * 8);
    for v in params {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    writeln!(w, "params {} crc32 {:08x}", params.len(), crc32(&bytes))?;
    w.write_all(&bytes)?;
    Ok(())
}

/// Serialize an energy model.
pub fn save_energy<W: Write>(w: &mut W, model: &EnergyModel) -> Result<(), EnergyError> {
    model.validate()?;
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "kind {KIND_ENERGY}")?;
    write_arch(w, &model.arch)?;
    writeln!(w, "sigma_min {}", model.schedule.sigma_min)?;
    writeln!(w, "sigma_max {}", model.schedule.sigma_max)?;
    writeln!(w, "eps {}", model.schedule.eps)?;
    write_params(w, &model.params)?;
    Ok(())
}

pub fn save_energy_file<P: AsRef<Path>>(path: P, model: &EnergyModel) -> Result<(), EnergyError> {
    let mut w = BufWriter::new(File::create(path)?);
    save_energy(&mut w, model)?;
    w.flush()?;
    Ok(())
}

/// Line-oriented header reader that turns EOF and malformed fields into
/// checkpoint errors.
pub(crate) struct HeaderReader<R: Read> {
    r: BufReader<R>,
}

impl<R: Read> HeaderReader<R> {
    pub fn new(inner: R) -> Self {
        Self { r: BufReader::new(inner) }
    }

    pub fn line(&mut self) -> Result<String, EnergyError> {
        let mut s = String::new();
        let n = self.r.read_line(&mut s)?;
        if n == 0 {
            return Err(EnergyError::CorruptCheckpoint("unexpected end of header".into()));
        }
        while s.ends_with('\n') || s.ends_with('\r') {
            s.pop();
        }
        Ok(s)
    }

    /// Expect a `name value` line and return the value text.
    pub fn field(&mut self, name: &str) -> Result<String, EnergyError> {
        let line = self.line()?;
        match line.split_once(' ') {
            Some((k, v)) if k == name => Ok(v.to_string()),
            _ => Err(EnergyError::CorruptCheckpoint(format!(
                "expected field '{name}', found '{line}'"
            ))),
        }
    }

    pub fn f64_field(&mut self, name: &str) -> Result<f64, EnergyError> {
        let v = self.field(name)?;
        v.parse().map_err(|_| {
            EnergyError::CorruptCheckpoint(format!("field '{name}' is not a number: '{v}'"))
        })
    }

    pub fn usize_field(&mut self, name: &str) -> Result<usize, EnergyError> {
        let v = self.field(name)?;
        v.parse().map_err(|_| {
            EnergyError::CorruptCheckpoint(format!("field '{name}' is not an integer: '{v}'"))
        })
    }

    /// Check the magic line; distinguish a wrong version from garbage.
    pub fn expect_magic(&mut self) -> Result<(), EnergyError> {
        let line = self.line()?;
        if line == MAGIC {
            Ok(())
        } else if line.starts_with("ebmpose-ckpt ") {
            Err(EnergyError::VersionMismatch(format!(
                "file declares '{line}', this build reads '{MAGIC}'"
            )))
        } else {
            Err(EnergyError::CorruptCheckpoint(format!(
                "not a checkpoint file (first line '{line}')"
            )))
        }
    }

    pub fn expect_kind(&mut self, kind: &str) -> Result<(), EnergyError> {
        let found = self.field("kind")?;
        if found == kind {
            Ok(())
        } else {
            Err(EnergyError::CorruptCheckpoint(format!(
                "expected kind '{kind}', found '{found}'"
            )))
        }
    }

    pub fn read_arch(&mut self) -> Result<ArchConfig, EnergyError> {
        Ok(ArchConfig {
            sensor: SensorConfig {
                grid_h: self.usize_field("grid_h")?,
                grid_w: self.usize_field("grid_w")?,
                plate_half_gap: self.f64_field("plate_half_gap")?,
                pixel_pitch: self.f64_field("pixel_pitch")?,
                max_depth: self.f64_field("max_depth")?,
            },
            workspace_half_extent: self.f64_field("workspace_half_extent")?,
            nominal_indentation: self.f64_field("nominal_indentation")?,
            enc_hidden: self.usize_field("enc_hidden")?,
            enc_feat: self.usize_field("enc_feat")?,
            obj_hidden: self.usize_field("obj_hidden")?,
            obj_feat: self.usize_field("obj_feat")?,
            obj_points: self.usize_field("obj_points")?,
            time_freqs: self.usize_field("time_freqs")?,
            time_feat: self.usize_field("time_feat")?,
            fusion_hidden: self.usize_field("fusion_hidden")?,
        })
    }

    /// Parse the `params <n> crc32 <hex>` line, read and verify the payload.
    pub fn read_params(&mut self) -> Result<Vec<f64>, EnergyError> {
        let line = self.line()?;
        let mut toks = line.split(' ');
        let (n, declared_crc) = match (toks.next(), toks.next(), toks.next(), toks.next(), toks.next())
        {
            (Some("params"), Some(n), Some("crc32"), Some(crc), None) => {
                let n: usize = n.parse().map_err(|_| {
                    EnergyError::CorruptCheckpoint(format!("bad parameter count '{n}'"))
                })?;
                let crc = u32::from_str_radix(crc, 16).map_err(|_| {
                    EnergyError::CorruptCheckpoint(format!("bad crc '{crc}'"))
                })?;
                (n, crc)
            }
            _ => {
                return Err(EnergyError::CorruptCheckpoint(format!(
                    "expected 'params <n> crc32 <hex>', found '{line}'"
                )))
            }
        };
        let mut bytes = vec![0u8; n * 8];
        self.r.read_exact(&mut bytes).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                EnergyError::CorruptCheckpoint("truncated parameter payload".into())
            } else {
                EnergyError::Io(e)
            }
        })?;
        let actual = crc32(&bytes);
        if actual != declared_crc {
            return Err(EnergyError::CorruptCheckpoint(format!(
                "parameter checksum mismatch: header {declared_crc:08x}, payload {actual:08x}"
            )));
        }
        let mut params = Vec::with_capacity(n);
        for chunk in bytes.chunks_exact(8) {
            let v = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
            if !v.is_finite() {
                return Err(EnergyError::CorruptCheckpoint("non-finite parameter".into()));
            }
            params.push(v);
        }
        Ok(params)
    }

    /// Fail if any bytes remain.
    pub fn expect_end(&mut self) -> Result<(), EnergyError> {
        let mut probe = [0u8; 1];
        match self.r.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(EnergyError::CorruptCheckpoint(
                "trailing data after parameter payload".into(),
            )),
        }
    }
}

/// Deserialize an energy model, verifying version, kind, checksum, and that
/// the payload matches the declared architecture.
pub fn load_energy<R: Read>(r: R) -> Result<EnergyModel, EnergyError> {
    let mut h = HeaderReader::new(r);
    h.expect_magic()?;
    h.expect_kind(KIND_ENERGY)?;
    let arch = h.read_arch()?;
    let schedule = NoiseSchedule {
        sigma_min: h.f64_field("sigma_min")?,
        sigma_max: h.f64_field("sigma_max")?,
        eps: h.f64_field("eps")?,
    };
    let params = h.read_params()?;
    h.expect_end()?;
    arch.validate()
        .map_err(|e| EnergyError::CorruptCheckpoint(e.to_string()))?;
    schedule
        .validate()
        .map_err(|e| EnergyError::CorruptCheckpoint(e.to_string()))?;
    let expect = arch.n_params();
    if params.len() != expect {
        return Err(EnergyError::CorruptCheckpoint(format!(
            "{} parameters in payload, architecture needs {expect}",
            params.len()
        )));
    }
    Ok(EnergyModel { arch, schedule, params })
}

pub fn load_energy_file<P: AsRef<Path>>(path: P) -> Result<EnergyModel, EnergyError> {
    load_energy(File::open(path)?)
}
