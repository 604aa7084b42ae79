use std::io::{Read, Write};

use super::network::Network;
use super::{NetworkConfig, SnnError};

const MAGIC: &[u8; 4] = b"SNNW";
const VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> SnnError {
    SnnError::Io(e.to_string())
}

/// Writes `SNNW`, a format version, the JSON config and every layer's
/// weights then biases as counted little-endian `f32` arrays.
pub fn write_weights<W: Write>(net: &Network<f32>, config: &NetworkConfig, mut w: W) -> Result<(), SnnError> {
    let json = serde_json::to_vec(config).map_err(|e| SnnError::Format(e.to_string()))?;
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(json.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&json).map_err(io_err)?;
    w.write_all(&(net.layers.len() as u32).to_le_bytes()).map_err(io_err)?;
    for l in &net.layers {
        for arr in [&l.weights, &l.bias] {
            w.write_all(&(arr.len() as u32).to_le_bytes()).map_err(io_err)?;
            let mut buf = Vec::with_capacity(arr.len() * 4);
            for v in arr.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, SnnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| SnnError::Format("truncated file".into()))?;
    Ok(u32::from_le_bytes(b))
}

/// Reads a weights file, rebuilding the network from its config echo.
pub fn read_weights<R: Read>(mut r: R) -> Result<(Network<f32>, NetworkConfig), SnnError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| SnnError::Format("truncated file".into()))?;
    if &magic != MAGIC {
        return Err(SnnError::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(SnnError::Format(format!("unsupported version {version}")));
    }
    let len = read_u32(&mut r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| SnnError::Format("truncated config".into()))?;
    let config: NetworkConfig = serde_json::from_slice(&json).map_err(|e| SnnError::Format(e.to_string()))?;
    let mut net = Network::new(&config)?;
    let layers = read_u32(&mut r)? as usize;
    if layers != net.layers.len() {
        return Err(SnnError::Format(format!("{layers} layers, config implies {}", net.layers.len())));
    }
    for l in &mut net.layers {
        for arr in [&mut l.weights, &mut l.bias] {
            let n = read_u32(&mut r)? as usize;
            if n != arr.len() {
                return Err(SnnError::Format(format!("array of {n} values, expected {}", arr.len())));
            }
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf).map_err(|_| SnnError::Format("truncated weights".into()))?;
            for (v, b) in arr.iter_mut().zip(buf.chunks_exact(4)) {
                *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            }
        }
    }
    Ok((net, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::ConvSpec;

    fn config() -> NetworkConfig {
        NetworkConfig {
            input_size: 16,
            conv1: ConvSpec { channels: 2, kernel: 3, stride: 2 },
            conv2: ConvSpec { channels: 2, kernel: 3, stride: 2 },
            hidden: 8,
            steps: 2,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = config();
        let net: Network<f32> = Network::new(&cfg).unwrap();
        let mut buf = Vec::new();
        write_weights(&net, &cfg, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"SNNW");
        let (back, cfg2) = read_weights(&buf[..]).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(back, net);
    }

    #[test]
    fn corrupt_files_rejected() {
        let cfg = config();
        let net: Network<f32> = Network::new(&cfg).unwrap();
        let mut buf = Vec::new();
        write_weights(&net, &cfg, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_weights(&bad[..]), Err(SnnError::Format(_))));
        assert!(matches!(read_weights(&buf[..buf.len() - 3]), Err(SnnError::Format(_))));
    }
}
