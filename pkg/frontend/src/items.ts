/** Item browser: the directory, filterable by type, linking to timelines. */

import { clear, el } from "./dom.js";
import { ConsoleSession } from "./session.js";

export class ItemsView {
  readonly root = el("div", { class: "items" });
  onOpen: ((itemName: string) => void) | null = null;

  constructor(private session: ConsoleSession) {}

  async refresh(typeFilter?: string): Promise<void> {
    const items = await this.session.api.items(typeFilter ? { type: typeFilter } : undefined);
    clear(this.root);
    this.root.append(el("h2", {}, "Items"));
    const filter = el("input", { type: "text", class: "type-filter",
      placeholder: "filter by type", value: typeFilter ?? "" });
    filter.addEventListener("change", () => {
      void this.refresh(filter.value || undefined);
    });
    this.root.append(filter);
    const table = el("table", { class: "item-table" });
    for (const item of items) {
      const link = el("a", { href: "#", class: "open-item" }, item.name);
      link.addEventListener("click", (event) => {
        event.preventDefault();
        this.onOpen?.(item.name);
      });
      table.append(el("tr", {},
        el("td", {}, link),
        el("td", {}, item.type ?? ""),
        el("td", { class: "uuid" }, item.uuid)));
    }
    this.root.append(table);
  }
}
