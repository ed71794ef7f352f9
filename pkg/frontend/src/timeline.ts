/**
 * Provenance timeline: an item's full history in order, outcomes expandable,
 * predefined-step events visually distinguished, with an optional filter to
 * just the outcome-bearing events of one schema.
 */

import { EventDoc } from "./api.js";
import { clear, el } from "./dom.js";
import { ConsoleSession } from "./session.js";

export class TimelineView {
  readonly root = el("div", { class: "timeline" });
  private events: EventDoc[] = [];
  private schemaFilter: string | null = null;

  constructor(private session: ConsoleSession) {}

  async show(itemId: string): Promise<void> {
    this.events = await this.session.api.events(itemId);
    this.schemaFilter = null;
    this.render(itemId);
  }

  get visibleEvents(): EventDoc[] {
    if (this.schemaFilter === null) {
      return this.events;
    }
    return this.events.filter(
      (ev) => ev["outcome-ref"] !== null && ev["outcome-ref"]["schema-name"] === this.schemaFilter,
    );
  }

  private render(itemId: string): void {
    clear(this.root);
    this.root.append(el("h2", {}, `History: ${itemId}`));

    const schemas = [...new Set(
      this.events
        .filter((ev) => ev["outcome-ref"] !== null)
        .map((ev) => ev["outcome-ref"]!["schema-name"]),
    )];
    if (schemas.length > 0) {
      const filter = el("select", { class: "schema-filter" },
        el("option", { value: "" }, "all events"));
      for (const name of schemas) {
        filter.append(el("option", { value: name }, `outcomes: ${name}`));
      }
      filter.addEventListener("change", () => {
        this.schemaFilter = filter.value === "" ? null : filter.value;
        this.renderList(list);
      });
      this.root.append(filter);
    }

    const list = el("ol", { class: "events", start: "0" });
    this.root.append(list);
    this.renderList(list);
  }

  private renderList(list: HTMLElement): void {
    clear(list);
    for (const ev of this.visibleEvents) {
      list.append(this.entry(ev));
    }
  }

  private entry(ev: EventDoc): HTMLElement {
    const step = ev["predefined-step"];
    const css = step !== null ? "event predefined-step" : "event";
    const item = el("li", { class: css, value: String(ev.seq), "data-seq": String(ev.seq) });
    const when = new Date(ev.timestamp / 1_000_000).toISOString();
    item.append(
      el("span", { class: "transition" }, ev.transition),
      " ",
      el("span", { class: "path" }, ev["activity-path"]),
      el("span", { class: "agent" }, ` by ${ev.agent.name} `),
      el("span", { class: "when" }, when),
    );
    if (step !== null) {
      item.append(el("span", { class: "step-badge" }, ` [${step.kind}]`));
    }
    if (ev.branch !== null && ev.branch !== undefined) {
      item.append(el("span", { class: "branch" }, ` decision: ${JSON.stringify(ev.branch)}`));
    }
    if (ev.outcome !== null && ev.outcome !== undefined) {
      item.append(
        el("details", { class: "outcome" },
          el("summary", {}, ev["outcome-ref"] ? ev["outcome-ref"]["schema-name"] : "outcome"),
          el("pre", {}, JSON.stringify(ev.outcome, null, 2))),
      );
    }
    return item;
  }
}
