//! Minimal mono WAV reader/writer (PCM 16-bit and IEEE float 32-bit).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut r = BufReader::new(File::open(path)?);
    let mut hdr = [0u8; 12];
    r.read_exact(&mut hdr)
        .map_err(|_| Error::Format(format!("{}: too short for RIFF header", path.display())))?;
    if &hdr[0..4] != b"RIFF" || &hdr[8..12] != b"WAVE" {
        return Err(Error::Format(format!("{}: not a RIFF/WAVE file", path.display())));
    }

    let mut format: Option<(u16, u16, u32, u16)> = None; // (audio_format, channels, rate, bits)
    loop {
        let mut chunk_hdr = [0u8; 8];
        match r.read_exact(&mut chunk_hdr) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let id = &chunk_hdr[0..4];
        let size = u32::from_le_bytes(chunk_hdr[4..8].try_into().unwrap()) as usize;
        if id == b"fmt " {
            let mut body = vec![0u8; size];
            r.read_exact(&mut body)?;
            if size < 16 {
                return Err(Error::Format("fmt chunk too short".into()));
            }
            let audio_format = u16::from_le_bytes(body[0..2].try_into().unwrap());
            let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
            let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
            let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
            format = Some((audio_format, channels, rate, bits));
        } else if id == b"data" {
            let (audio_format, channels, rate, bits) = format.ok_or_else(|| {
                Error::Format(format!("{}: data chunk before fmt", path.display()))
            })?;
            if channels != 1 {
                return Err(Error::InvalidInput(format!(
                    "{}: {channels} channels; only mono is accepted",
                    path.display()
                )));
            }
            let mut body = vec![0u8; size];
            r.read_exact(&mut body)?;
            let samples = match (audio_format, bits) {
                (1, 16) => body
                    .chunks_exact(2)
                    .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
                    .collect(),
                (3, 32) => body
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                    .collect(),
                _ => {
                    return Err(Error::Format(format!(
                        "{}: unsupported format {audio_format}/{bits}-bit (PCM 16 or float 32)",
                        path.display()
                    )))
                }
            };
            return Waveform::new(samples, rate);
        } else {
            // Skip unknown chunk (sizes are padded to even).
            let skip = size + (size & 1);
            let mut sink = vec![0u8; skip];
            r.read_exact(&mut sink)?;
            continue;
        }
        if size & 1 == 1 {
            let mut pad = [0u8; 1];
            let _ = r.read_exact(&mut pad);
        }
    }
    Err(Error::Format(format!("{}: no data chunk", path.display())))
}

pub fn write_wav_pcm16(path: &Path, w: &Waveform) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let data_len = (w.samples.len() * 2) as u32;
    write_header(&mut out, w.sample_rate, 1, 16, data_len)?;
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_wav_f32(path: &Path, w: &Waveform) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let data_len = (w.samples.len() * 4) as u32;
    write_header(&mut out, w.sample_rate, 3, 32, data_len)?;
    for &s in &w.samples {
        out.write_all(&(s as f32).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn write_header(
    out: &mut impl Write,
    rate: u32,
    audio_format: u16,
    bits: u16,
    data_len: u32,
) -> Result<()> {
    let block_align = bits / 8; // mono
    out.write_all(b"RIFF")?;
    out.write_all(&(36 + data_len).to_le_bytes())?;
    out.write_all(b"WAVE")?;
    out.write_all(b"fmt ")?;
    out.write_all(&16u32.to_le_bytes())?;
    out.write_all(&audio_format.to_le_bytes())?;
    out.write_all(&1u16.to_le_bytes())?;
    out.write_all(&rate.to_le_bytes())?;
    out.write_all(&(rate * block_align as u32).to_le_bytes())?;
    out.write_all(&block_align.to_le_bytes())?;
    out.write_all(&bits.to_le_bytes())?;
    out.write_all(b"data")?;
    out.write_all(&data_len.to_le_bytes())?;
    Ok(())
}
