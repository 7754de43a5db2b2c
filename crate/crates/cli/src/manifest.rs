//! Run manifests written next to every output artifact.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    /// Every flag after config-file expansion and defaults.
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
}

pub fn digest(path: &Path) -> io::Result<InputDigest> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(InputDigest {
        path: path.to_path_buf(),
        bytes,
        sha256: hex::encode(hasher.finalize()),
    })
}

/// Clock for one run, started when the subcommand begins.
pub struct RunClock {
    started: SystemTime,
    timer: Instant,
}

impl RunClock {
    pub fn start() -> Self {
        RunClock {
            started: SystemTime::now(),
            timer: Instant::now(),
        }
    }

    pub fn manifest<C: Serialize>(
        &self,
        subcommand: &str,
        config: &C,
        inputs: &[&Path],
        outputs: Vec<PathBuf>,
        seed: Option<u64>,
    ) -> anyhow::Result<RunManifest> {
        let inputs = inputs
            .iter()
            .map(|p| digest(p).map_err(|e| anyhow::Error::new(e).context(format!("cannot hash {}", p.display()))))
            .collect::<anyhow::Result<_>>()?;
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            config: serde_json::to_value(config)?,
            inputs,
            outputs,
            seed,
            started_unix: self.started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_clock_seconds: self.timer.elapsed().as_secs_f64(),
        })
    }
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Write `bytes` to a sibling temporary file and rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

impl RunManifest {
    /// Write `<artifact>.manifest.json`.
    pub fn write_for(&self, artifact: &Path) -> anyhow::Result<PathBuf> {
        let path = manifest_path(artifact);
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        write_atomic(&path, &json)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_known_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        std::fs::write(&p, b"abc").unwrap();
        let d = digest(&p).unwrap();
        assert_eq!(d.sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(d.bytes, 3);
    }

    #[test]
    fn manifest_sits_next_to_artifact() {
        assert_eq!(manifest_path(Path::new("out/m.bsvm")), PathBuf::from("out/m.bsvm.manifest.json"));
    }
}
