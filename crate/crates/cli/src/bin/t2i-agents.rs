fn main() -> std::process::ExitCode {
    t2i_cli::cli::main_with_args(std::env::args_os())
}
