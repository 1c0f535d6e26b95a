use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use toadwave_core::{Field2D, TraitGrid};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: &str = "toadwave-output/1";

/// Every JSON artifact: schema version, resolved configuration, payload.
#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema: &'static str,
    config: &'a RunConfig,
    #[serde(flatten)]
    body: &'a T,
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, config: &RunConfig, body: &T) -> CliResult<PathBuf> {
    let env = Envelope {
        schema: SCHEMA_VERSION,
        config,
        body,
    };
    let mut text = serde_json::to_string_pretty(&env)
        .map_err(|e| CliError::Numerical(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_file(path, &text)?;
    Ok(path.to_path_buf())
}

/// CSV with the shortest round-trip decimal form of every value.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> CliResult<PathBuf>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut text = header.join(",");
    text.push('\n');
    for row in rows {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                text.push(',');
            }
            write!(text, "{v}").expect("writing to a String");
        }
        text.push('\n');
    }
    write_file(path, &text)?;
    Ok(path.to_path_buf())
}

/// A space x trait field as `(space, theta, value)` rows, space-major.
pub fn write_field_csv(
    path: &Path,
    header: [&str; 3],
    space: &[f64],
    grid: &TraitGrid,
    field: &Field2D,
) -> CliResult<PathBuf> {
    let rows = space.iter().enumerate().flat_map(|(i, &x)| {
        grid.nodes()
            .iter()
            .enumerate()
            .map(move |(j, &t)| vec![x, t, field.get(i, j)])
    });
    write_csv(path, &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_uses_shortest_round_trip_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_csv(&p, &["x", "y"], vec![vec![0.1, 2.0], vec![1e-20, -3.5]]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "x,y\n0.1,2\n0.00000000000000000001,-3.5\n");
        for line in text.lines().skip(1) {
            for v in line.split(',') {
                let parsed: f64 = v.parse().unwrap();
                assert_eq!(format!("{parsed}"), v);
            }
        }
    }

    #[test]
    fn json_embeds_schema_and_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.json");
        #[derive(Serialize)]
        struct Body {
            value: f64,
        }
        write_json(&p, &RunConfig::default(), &Body { value: 1.5 }).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(v["schema"], SCHEMA_VERSION);
        assert_eq!(v["value"], 1.5);
        assert_eq!(v["config"]["slab"]["epsilon"], 0.01);
    }
}
