//! `--config <path>` support: `key=value` lines become `--key value` flags
//! for the selected subcommand, unless the same flag was given explicitly.

use std::collections::BTreeSet;

use clap::{ArgAction, Command};

use crate::error::CliError;

/// Returns `argv` with config-file entries appended. Keys the selected
/// subcommand does not accept are rejected.
pub fn merge(argv: Vec<String>, root: &Command) -> Result<Vec<String>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let leaf = selected_command(&argv, root);
    let explicit = given_flags(&argv);
    let mut out = argv;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{path}:{}: expected key=value", lineno + 1)))?;
        let key = key.trim().trim_start_matches("--");
        let value = value.trim();
        if explicit.contains(key) {
            continue;
        }
        let arg = leaf
            .get_arguments()
            .chain(root.get_arguments())
            .find(|a| a.get_long() == Some(key))
            .ok_or_else(|| CliError::Usage(format!("{path}:{}: unknown key `{key}` for this command", lineno + 1)))?;
        match arg.get_action() {
            ArgAction::SetTrue => match value {
                "true" | "1" | "yes" => out.push(format!("--{key}")),
                "false" | "0" | "no" => {}
                other => return Err(CliError::Usage(format!("{path}:{}: `{other}` is not a boolean", lineno + 1))),
            },
            _ => {
                out.push(format!("--{key}"));
                out.push(value.to_string());
            }
        }
    }
    Ok(out)
}

fn config_path(argv: &[String]) -> Option<String> {
    argv.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            argv.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    })
}

fn given_flags(argv: &[String]) -> BTreeSet<String> {
    argv.iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect()
}

/// Follows leading non-flag tokens down the subcommand tree.
fn selected_command<'c>(argv: &[String], root: &'c Command) -> &'c Command {
    let mut cmd = root;
    let mut skip_value = false;
    for token in argv.iter().skip(1) {
        if skip_value {
            skip_value = false;
            continue;
        }
        if let Some(flag) = token.strip_prefix("--") {
            // global flags with a separate value
            skip_value = !flag.contains('=') && matches!(flag, "config" | "threads");
            continue;
        }
        match cmd.find_subcommand(token) {
            Some(sub) => cmd = sub,
            None => break,
        }
    }
    cmd
}
