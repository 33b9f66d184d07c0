fn main() {
    std::process::exit(shiftmpc::cli::main_with(std::env::args_os()));
}
