#include <iostream>

#include "interlab/acceptance.hpp"

int main() {
  const int failed = interlab::accept::run_acceptance(std::cout);
  return failed == 0 ? 0 : 1;
}
