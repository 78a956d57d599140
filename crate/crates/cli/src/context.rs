//! Loading shared by every subcommand and the service.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use barbot_core::config::Config;
use barbot_core::corpus::{builtin_recipes, load_dir, RecipeIndex};
use barbot_core::perception::{parse_document, snapshot_from_document, InventorySnapshot};
use barbot_core::reconcile::RuleTable;
use barbot_core::scene;

use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct Context {
    pub config: Config,
}

impl Context {
    /// Without a config file the demo table's perception settings apply.
    pub fn load(config_path: Option<&Path>, recipes_dir: Option<PathBuf>) -> Result<Self, CliError> {
        let mut config = match config_path {
            Some(path) => Config::load(path)?,
            None => Config { perception: scene::demo_perception_config(), ..Config::default() },
        };
        if recipes_dir.is_some() {
            config.recipes_dir = recipes_dir;
        }
        Ok(Context { config })
    }

    pub fn corpus(&self) -> Result<RecipeIndex, CliError> {
        let recipes = match &self.config.recipes_dir {
            Some(dir) => load_dir(dir)?,
            None => builtin_recipes(),
        };
        Ok(RecipeIndex::from_recipes(recipes)?)
    }

    pub fn rules(&self) -> Result<RuleTable, CliError> {
        Ok(self.config.rules()?)
    }

    pub fn snapshot(&self, detections: &Path) -> Result<InventorySnapshot, CliError> {
        let doc = parse_document(&read_input(detections)?)?;
        Ok(snapshot_from_document(&doc, &self.config.perception)?)
    }

    pub fn demo_snapshot(&self) -> InventorySnapshot {
        snapshot_from_document(&scene::demo_detections(), &self.config.perception).expect("demo table is valid")
    }
}

/// Reads a file, or stdin for `-`.
pub fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        std::io::stdin().read_to_end(&mut buf).map_err(|e| CliError::io(path, e))?;
        return Ok(buf);
    }
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Writes to a file, or to `stdout` when no path (or `-`) is given.
pub fn write_output(path: Option<&Path>, bytes: &[u8], stdout: &mut dyn Write) -> Result<(), CliError> {
    match path {
        Some(p) if p != Path::new("-") => std::fs::write(p, bytes).map_err(|e| CliError::io(p, e)),
        _ => {
            stdout.write_all(bytes).and_then(|_| stdout.write_all(b"\n")).map_err(|e| CliError::io(Path::new("-"), e))
        }
    }
}
