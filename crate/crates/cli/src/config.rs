//! `key=value` configuration files. Every key names a long flag of the chosen
//! subcommand; entries are appended to the command line unless that flag is
//! already present, so explicit flags win.

use std::ffi::OsString;

use anyhow::{bail, Context, Result};

pub fn expand_args(mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args)? else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read config {}", path))?;
    for (key, value) in parse(&text).with_context(|| format!("in config {path}"))? {
        let flag = format!("--{key}");
        let present = args.iter().any(|a| {
            let a = a.to_string_lossy();
            a == flag || a.starts_with(&format!("{flag}="))
        });
        if present {
            continue;
        }
        match value.as_str() {
            "true" => args.push(flag.into()),
            "false" => {}
            _ => {
                args.push(flag.into());
                args.push(value.into());
            }
        }
    }
    Ok(args)
}

fn config_path(args: &[OsString]) -> Result<Option<String>> {
    let mut iter = args.iter().map(|a| a.to_string_lossy());
    while let Some(a) = iter.next() {
        if a == "--config" {
            return match iter.next() {
                Some(p) => Ok(Some(p.into_owned())),
                None => bail!("--config needs a path"),
            };
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Ok(Some(p.to_string()));
        }
    }
    Ok(None)
}

/// Parses `key=value` lines; `#` starts a comment line.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected key=value", idx + 1);
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() || key == "config" {
            bail!("line {}: invalid key {key:?}", idx + 1);
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn parses_pairs() {
        let p = parse("# run\nmodel = fixed\nbeta_fraction=0.3\n\nstrict=true\n").unwrap();
        assert_eq!(
            p,
            vec![
                ("model".into(), "fixed".into()),
                ("beta-fraction".into(), "0.3".into()),
                ("strict".into(), "true".into())
            ]
        );
        assert!(parse("novalue\n").is_err());
        assert!(parse("config=x\n").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "model=fixed\ndelay=10\nstrict=true\nk-max=3\n").unwrap();
        let args = os(&["dsruin", "sweep", "--config", path.to_str().unwrap(), "--k-max=5"]);
        let out: Vec<String> = expand_args(args).unwrap().into_iter().map(|s| s.into_string().unwrap()).collect();
        assert_eq!(out[4], "--k-max=5");
        assert!(out.windows(2).any(|w| w[0] == "--model" && w[1] == "fixed"));
        assert!(out.contains(&"--strict".to_string()));
        assert!(!out.contains(&"3".to_string()));
    }

    #[test]
    fn no_config_is_identity() {
        let args = os(&["dsruin", "sweep"]);
        assert_eq!(expand_args(args.clone()).unwrap(), args);
    }
}
