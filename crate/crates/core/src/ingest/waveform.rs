//! Raw waveform storage: little-endian `f32` channel-major payload plus a
//! JSON sidecar header. The format is bit-exact under write/read round trips.

use super::{EcgRecord, IngestError, CHANNEL_NAMES, N_CHANNELS, RECORD_SECONDS};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

const SCALE_TAG: &str = "float32-le";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    record_id: String,
    patient_id: String,
    acquisition_time: i64,
    sampling_rate_hz: u32,
    n_samples: usize,
    channel_names: Vec<String>,
    scale: String,
}

fn malformed(path: &Path, detail: impl Into<String>) -> IngestError {
    IngestError::MalformedHeader {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Parse one record from its payload file and JSON sidecar.
///
/// Validates the fixed channel set and order, the ten-second length
/// invariant, payload length agreement and sample finiteness.
pub fn read_waveform(payload: &Path, sidecar: &Path) -> Result<EcgRecord, IngestError> {
    let header_bytes = fs::read(sidecar).map_err(|source| IngestError::Io {
        path: sidecar.to_path_buf(),
        source,
    })?;
    let header: Sidecar = serde_json::from_slice(&header_bytes)
        .map_err(|e| malformed(sidecar, e.to_string()))?;

    if header.channel_names.len() != N_CHANNELS {
        return Err(malformed(
            sidecar,
            format!(
                "expected {} channels, got {}",
                N_CHANNELS,
                header.channel_names.len()
            ),
        ));
    }
    for (i, (got, want)) in header.channel_names.iter().zip(CHANNEL_NAMES).enumerate() {
        if got != want {
            return Err(malformed(
                sidecar,
                format!("channel {i} must be {want:?}, got {got:?}"),
            ));
        }
    }
    if header.scale != SCALE_TAG {
        return Err(malformed(
            sidecar,
            format!("unsupported scale {:?}", header.scale),
        ));
    }
    if header.sampling_rate_hz == 0 {
        return Err(malformed(sidecar, "sampling_rate_hz must be positive"));
    }
    let expected = header.sampling_rate_hz as usize * RECORD_SECONDS as usize;
    if header.n_samples != expected {
        return Err(malformed(
            sidecar,
            format!(
                "n_samples {} violates the {}-second record invariant at {} Hz (expected {})",
                header.n_samples, RECORD_SECONDS, header.sampling_rate_hz, expected
            ),
        ));
    }

    let raw = fs::read(payload).map_err(|source| IngestError::Io {
        path: payload.to_path_buf(),
        source,
    })?;
    if raw.len() % 4 != 0 || raw.len() / 4 % N_CHANNELS != 0 {
        return Err(IngestError::LengthMismatch {
            path: payload.to_path_buf(),
            expected: header.n_samples,
            actual: raw.len() / 4 / N_CHANNELS,
        });
    }
    let actual = raw.len() / 4 / N_CHANNELS;
    if actual != header.n_samples {
        return Err(IngestError::LengthMismatch {
            path: payload.to_path_buf(),
            expected: header.n_samples,
            actual,
        });
    }

    let mut samples = Vec::with_capacity(raw.len() / 4);
    for chunk in raw.chunks_exact(4) {
        samples.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    for (flat, &v) in samples.iter().enumerate() {
        if !v.is_finite() {
            return Err(IngestError::NonFiniteSample {
                path: payload.to_path_buf(),
                channel: CHANNEL_NAMES[flat / header.n_samples].to_string(),
                index: flat % header.n_samples,
            });
        }
    }

    Ok(EcgRecord {
        record_id: header.record_id,
        patient_id: header.patient_id,
        acquisition_time: header.acquisition_time,
        sampling_rate_hz: header.sampling_rate_hz,
        samples,
        n_samples: header.n_samples,
    })
}

/// Write one record as payload + sidecar. Inverse of [`read_waveform`].
pub fn write_waveform(rec: &EcgRecord, payload: &Path, sidecar: &Path) -> Result<(), IngestError> {
    let header = Sidecar {
        record_id: rec.record_id.clone(),
        patient_id: rec.patient_id.clone(),
        acquisition_time: rec.acquisition_time,
        sampling_rate_hz: rec.sampling_rate_hz,
        n_samples: rec.n_samples,
        channel_names: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
        scale: SCALE_TAG.to_string(),
    };
    let header_bytes =
        serde_json::to_vec_pretty(&header).expect("sidecar serialization cannot fail");
    fs::write(sidecar, header_bytes).map_err(|source| IngestError::Io {
        path: sidecar.to_path_buf(),
        source,
    })?;

    let mut raw = Vec::with_capacity(rec.samples.len() * 4);
    for &v in &rec.samples {
        raw.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(payload, raw).map_err(|source| IngestError::Io {
        path: payload.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_record(rng: &mut ChaCha8Rng, rate: u32) -> EcgRecord {
        let n = rate as usize * RECORD_SECONDS as usize;
        EcgRecord {
            record_id: "r0001".into(),
            patient_id: "p0001".into(),
            acquisition_time: 1_700_000_000,
            sampling_rate_hz: rate,
            samples: (0..N_CHANNELS * n)
                .map(|_| rng.random_range(-5.0f32..5.0))
                .collect(),
            n_samples: n,
        }
    }

    #[test]
    fn valid_500hz_record_has_5000_samples() {
        let dir = tempfile::tempdir().unwrap();
        let rec = random_record(&mut ChaCha8Rng::seed_from_u64(1), 500);
        let payload = dir.path().join("r0001.f32");
        let sidecar = dir.path().join("r0001.json");
        write_waveform(&rec, &payload, &sidecar).unwrap();
        let back = read_waveform(&payload, &sidecar).unwrap();
        assert_eq!(back.n_samples, 5000);
        assert_eq!(back, rec); // bit-exact round trip
    }

    #[test]
    fn eleven_channels_is_malformed_header() {
        let dir = tempfile::tempdir().unwrap();
        let rec = random_record(&mut ChaCha8Rng::seed_from_u64(2), 100);
        let payload = dir.path().join("r.f32");
        let sidecar = dir.path().join("r.json");
        write_waveform(&rec, &payload, &sidecar).unwrap();

        // Drop one channel name from the sidecar.
        let mut v: serde_json::Value =
            serde_json::from_slice(&std::fs::read(&sidecar).unwrap()).unwrap();
        v["channel_names"].as_array_mut().unwrap().pop();
        std::fs::write(&sidecar, serde_json::to_vec(&v).unwrap()).unwrap();

        match read_waveform(&payload, &sidecar) {
            Err(IngestError::MalformedHeader { .. }) => {}
            other => panic!("expected MalformedHeader, got {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_malformed_header() {
        let dir = tempfile::tempdir().unwrap();
        let rec = random_record(&mut ChaCha8Rng::seed_from_u64(3), 100);
        let payload = dir.path().join("r.f32");
        let sidecar = dir.path().join("r.json");
        write_waveform(&rec, &payload, &sidecar).unwrap();

        let mut v: serde_json::Value =
            serde_json::from_slice(&std::fs::read(&sidecar).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("patient_id");
        std::fs::write(&sidecar, serde_json::to_vec(&v).unwrap()).unwrap();

        match read_waveform(&payload, &sidecar) {
            Err(IngestError::MalformedHeader { detail, .. }) => {
                assert!(detail.contains("patient_id"), "detail was {detail:?}");
            }
            other => panic!("expected MalformedHeader, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let rec = random_record(&mut ChaCha8Rng::seed_from_u64(4), 100);
        let payload = dir.path().join("r.f32");
        let sidecar = dir.path().join("r.json");
        write_waveform(&rec, &payload, &sidecar).unwrap();

        let raw = std::fs::read(&payload).unwrap();
        std::fs::write(&payload, &raw[..raw.len() - 4 * N_CHANNELS]).unwrap();
        match read_waveform(&payload, &sidecar) {
            Err(IngestError::LengthMismatch {
                expected, actual, ..
            }) => {
                assert_eq!(expected, 1000);
                assert_eq!(actual, 999);
            }
            other => panic!("expected LengthMismatch, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_sample_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = random_record(&mut ChaCha8Rng::seed_from_u64(5), 100);
        rec.channel_mut(3)[17] = f32::NAN;
        let payload = dir.path().join("r.f32");
        let sidecar = dir.path().join("r.json");
        write_waveform(&rec, &payload, &sidecar).unwrap();
        match read_waveform(&payload, &sidecar) {
            Err(IngestError::NonFiniteSample { channel, index, .. }) => {
                assert_eq!(channel, "aVR");
                assert_eq!(index, 17);
            }
            other => panic!("expected NonFiniteSample, got {other:?}"),
        }
    }
}
