#pragma once

namespace consense::debug {

/// Names a backward rule or optimizer detail to corrupt deliberately, so the
/// verification suites can demonstrate they detect real defects. Null in
/// normal operation. Supported sites: matmul, softmax, tanh, cross-entropy,
/// gaussian-logits, adam.
void set_injected_fault(const char* op);  // nullptr clears
const char* injected_fault();
bool fault_is(const char* op);

}  // namespace consense::debug
