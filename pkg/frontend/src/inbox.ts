/**
 * The job inbox: everything the logged-in agent can work on right now.
 *
 * Selecting a job with a schema opens its generated form. Submitting blocks
 * on client-side problems unless forced; a forced submit lets the server
 * judge, and its 422 violation paths are rendered inline. A 409 (someone
 * else moved the item first) refetches the inbox and says so — it never
 * silently retries.
 */

import { ApiError, JobDoc, Violation } from "./api.js";
import { clear, el } from "./dom.js";
import { renderForm } from "./forms.js";
import { ConsoleSession } from "./session.js";

export class InboxView {
  readonly root = el("div", { class: "inbox" });
  private jobs: JobDoc[] = [];
  onChanged: (() => void) | null = null;

  constructor(private session: ConsoleSession) {}

  async refresh(): Promise<void> {
    this.jobs = await this.session.api.jobs(this.session.agent.name);
    this.render();
  }

  private render(): void {
    clear(this.root);
    this.root.append(el("h2", {}, `Inbox: ${this.session.agent.name}`));
    if (this.jobs.length === 0) {
      this.root.append(el("p", { class: "empty" }, "No work right now."));
      return;
    }
    for (const job of this.jobs) {
      this.root.append(this.card(job));
    }
  }

  private card(job: JobDoc): HTMLElement {
    const card = el("div", { class: "job-card", "data-item": job.item.name },
      el("h3", {}, `${job.item.name} — ${job["activity-path"]}`),
      el("p", { class: "transitions" }, job["allowed-transitions"].join(", ")));
    const notice = el("p", { class: "notice" });
    card.append(notice);

    for (const transition of job["allowed-transitions"]) {
      if (transition === "Complete" && job.form) {
        continue; // rendered with the form below
      }
      const button = el("button", { type: "button", class: `do-${transition}` }, transition);
      button.addEventListener("click", () => {
        void this.submit(job, transition, undefined, notice);
      });
      card.append(button);
    }

    if (job.form && job["allowed-transitions"].includes("Complete")) {
      const form = renderForm(job.form);
      const problemsBox = el("ul", { class: "problems" });
      const submit = el("button", { type: "button", class: "do-Complete" }, "Complete");
      const force = el("input", { type: "checkbox", class: "force" });
      submit.addEventListener("click", () => {
        clear(problemsBox);
        const problems = form.problems();
        if (problems.length > 0 && !force.checked) {
          this.showProblems(problemsBox, problems, "blocked by the form");
          return;
        }
        void this.submit(job, "Complete", form.read(), notice, problemsBox);
      });
      card.append(
        form.root,
        el("div", { class: "submit-row" },
          submit,
          el("label", { class: "force-label" }, force, "submit anyway")),
        problemsBox,
      );
    }
    return card;
  }

  private async submit(
    job: JobDoc,
    transition: string,
    outcome: unknown,
    notice: HTMLElement,
    problemsBox?: HTMLElement,
  ): Promise<void> {
    try {
      await this.session.api.execute(job.item.name, {
        "activity-path": job["activity-path"],
        transition,
        outcome,
        "expected-seq": job["expected-seq"],
      });
      notice.textContent = `${transition} recorded`;
      await this.refresh();
      this.onChanged?.();
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        notice.textContent = "Someone got there first; the inbox was refreshed.";
        await this.refresh();
        this.onChanged?.();
        return;
      }
      if (error instanceof ApiError && error.status === 422 && problemsBox) {
        this.showProblems(problemsBox, error.violations, "rejected by the server");
        return;
      }
      notice.textContent = error instanceof Error ? error.message : String(error);
    }
  }

  private showProblems(box: HTMLElement, problems: Violation[], heading: string): void {
    clear(box);
    box.append(el("li", { class: "heading" }, heading));
    for (const problem of problems) {
      box.append(el("li", { class: "violation" }, `${problem.code} at "${problem.path}"`));
    }
  }
}
