#include <iostream>

#include "nsdesk/cli/cli.hpp"
#include "nsdesk/common/process.hpp"

int main(int argc, char** argv) {
    nsdesk::tune_process_allocator();
    return nsdesk::cli::run(argc, argv, std::cout, std::cerr);
}
