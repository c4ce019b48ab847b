use std::fs;
use std::io;
use std::path::Path;

use neuracodec::MasterKey;

use crate::Failure;

pub const KEY_ENV: &str = "NEURACODEC_KEY";

/// `--key` file if given, else `NEURACODEC_KEY` as either 64 hex chars or a path.
pub fn resolve(flag: Option<&Path>) -> Result<MasterKey, Failure> {
    if let Some(path) = flag {
        return read_key_file(path);
    }
    match std::env::var(KEY_ENV) {
        Ok(value) if !value.trim().is_empty() => {
            let trimmed = value.trim();
            if trimmed.len() == 64 && trimmed.bytes().all(|b| b.is_ascii_hexdigit()) {
                Ok(MasterKey::parse_hex(trimmed)?)
            } else {
                read_key_file(Path::new(&value))
            }
        }
        _ => Err(Failure::Data(format!("no key: pass --key <file> or set {KEY_ENV}"))),
    }
}

fn read_key_file(path: &Path) -> Result<MasterKey, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Data(format!("reading key {}: {e}", path.display())))?;
    MasterKey::parse_key_file(&text).map_err(|e| Failure::Data(format!("key {}: {e}", path.display())))
}

pub fn write_key_file(path: &Path, key: &MasterKey) -> io::Result<()> {
    let mut options = fs::OpenOptions::new();
    options.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        options.mode(0o600);
    }
    let mut file = options.open(path)?;
    io::Write::write_all(&mut file, format!("{}\n", key.to_hex()).as_bytes())
}
