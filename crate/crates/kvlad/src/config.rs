//! Flat `key = value` configuration files. Keys use the long flag names
//! without the leading dashes; `#` starts a comment.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
    source: String,
}

impl Config {
    pub fn parse(text: &str, source: &str) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("{source}:{}: expected `key = value`", n + 1))?;
            let key = k.trim().replace('_', "-");
            if key.is_empty() {
                return Err(format!("{source}:{}: empty key", n + 1));
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(format!("{source}:{}: duplicate key `{key}`", n + 1));
            }
        }
        Ok(Config {
            values,
            source: source.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Config::parse(&text, &path.display().to_string())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, String>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| format!("{}: key `{key}`: invalid value `{v}`: {e}", self.source))
            })
            .transpose()
    }

    /// Flag value if given, else the config value.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, String>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    /// Keys not in `known`, for reporting typos.
    pub fn unknown_keys(&self, known: &[&str]) -> Vec<String> {
        self.values
            .keys()
            .filter(|k| !known.contains(&k.as_str()))
            .cloned()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_picks() {
        let c = Config::parse(
            "# run\nm = 8\nsigma=2.5 # bandwidth\nnorm = intra,ssr\n",
            "t",
        )
        .unwrap();
        assert_eq!(c.get::<usize>("m").unwrap(), Some(8));
        assert_eq!(c.pick(Some(4usize), "m").unwrap(), Some(4));
        assert_eq!(c.pick::<f64>(None, "sigma").unwrap(), Some(2.5));
        assert_eq!(c.raw("norm"), Some("intra,ssr"));
        assert!(c.get::<usize>("norm").unwrap_err().contains("norm"));
        assert!(Config::parse("m 8", "t").is_err());
        assert!(Config::parse("m = 1\nm = 2", "t").is_err());
    }
}
