fn main() -> std::process::ExitCode {
    sbs_cli::main_entry()
}
