#ifndef COMPETENCE_COMPETENCE_HPP
#define COMPETENCE_COMPETENCE_HPP

// Everything except the HTTP service, which lives in competence/service.hpp
// so that builds without cpp-httplib still get the full engine.

#include "competence/errors.hpp"
#include "competence/embedding_space.hpp"
#include "competence/ca_zero.hpp"
#include "competence/ca_expert.hpp"
#include "competence/ingest_store.hpp"
#include "competence/harness.hpp"
#include "competence/synthetic.hpp"

#endif
