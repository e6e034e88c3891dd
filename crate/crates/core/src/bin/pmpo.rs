use std::io::Write;

fn main() {
    let out = pmpo::cli::main_with(std::env::args_os());
    if out.is_error {
        eprint!("{}", out.output);
    } else {
        print!("{}", out.output);
        let _ = std::io::stdout().flush();
    }
    std::process::exit(out.code);
}
