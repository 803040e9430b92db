fn main() -> std::process::ExitCode {
    fingercascade::cli::main_entry()
}
