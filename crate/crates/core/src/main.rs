fn main() -> std::process::ExitCode {
    afc_memsim::cli::main()
}
