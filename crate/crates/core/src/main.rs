fn main() {
    std::process::exit(qldm_core::cli::main_with_args(std::env::args_os()));
}
