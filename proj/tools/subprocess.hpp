#pragma once

#include <csignal>
#include <cstdio>
#include <string>

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include "eside/error.hpp"

namespace cli {

// Child process running `/bin/sh -c command`, spoken to line by line over
// its stdin/stdout. Its stderr is inherited.
class LineProcess {
 public:
  explicit LineProcess(const std::string& command) {
    int to_child[2];
    int from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0) throw eside::Error("rewriter: pipe failed");
    std::signal(SIGPIPE, SIG_IGN);
    pid_ = fork();
    if (pid_ < 0) throw eside::Error("rewriter: fork failed");
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    in_ = fdopen(to_child[1], "w");
    out_ = fdopen(from_child[0], "r");
    if (!in_ || !out_) throw eside::Error("rewriter: fdopen failed");
  }

  LineProcess(const LineProcess&) = delete;
  LineProcess& operator=(const LineProcess&) = delete;

  ~LineProcess() { finish(); }

  // Sends one line and waits for one line back.
  std::string exchange(const std::string& line) {
    if (!in_ || !out_) throw eside::Error("rewriter: process already closed");
    if (std::fputs(line.c_str(), in_) < 0 || std::fputc('\n', in_) == EOF || std::fflush(in_) != 0) {
      throw eside::Error("rewriter: cannot write request (process exited?)");
    }
    std::string reply;
    int c;
    while ((c = std::fgetc(out_)) != EOF && c != '\n') reply += static_cast<char>(c);
    if (c == EOF && reply.empty()) throw eside::Error("rewriter: process closed its output without replying");
    return reply;
  }

  // Closes the pipes and reaps the child; returns its exit status.
  int finish() {
    if (in_) {
      std::fclose(in_);
      in_ = nullptr;
    }
    if (out_) {
      std::fclose(out_);
      out_ = nullptr;
    }
    if (pid_ > 0) {
      int status = 0;
      waitpid(pid_, &status, 0);
      pid_ = -1;
      status_ = WIFEXITED(status) ? WEXITSTATUS(status) : 128;
    }
    return status_;
  }

 private:
  pid_t pid_ = -1;
  FILE* in_ = nullptr;
  FILE* out_ = nullptr;
  int status_ = 0;
};

}  // namespace cli
