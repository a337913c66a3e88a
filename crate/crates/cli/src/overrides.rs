//! Dotted-path config flags (`--optimizer.lr 0.01`, `--optimizer.lr=0.01`)
//! are pulled out of the argument list before clap sees it.

use mgtr_core::Error;

pub type Split = (Vec<String>, Vec<(String, String)>);

pub fn split_args(args: impl IntoIterator<Item = String>) -> Result<Split, Error> {
    let mut rest = Vec::new();
    let mut dotted = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (flag, None),
        };
        if !name.contains('.') {
            rest.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| Error::Config(format!("--{name} needs a value")))?,
        };
        dotted.push((name.to_string(), value));
    }
    Ok((rest, dotted))
}
