fn main() -> std::process::ExitCode {
    optdiverse::cli::main()
}
